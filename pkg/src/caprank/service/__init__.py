"""HTTP annotation service: dispenses ranking tasks, records preferences."""

from .app import AnnotationService, create_app
from .leases import LeaseTable

__all__ = ["AnnotationService", "create_app", "LeaseTable"]
