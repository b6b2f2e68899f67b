/**
 * DOM rendering and drag-and-drop wiring.
 *
 * Rendering is a pure projection of the session state (full re-render per
 * change; the views are small). Caption cards are draggable; drop targets
 * are the gaps between groups (new group), the group boxes themselves
 * (tie), and the tray (unrank). The caption order shown in the tray is
 * exactly the service-provided shuffle and is never reordered client-side.
 */

import type { AnnotationSession } from "./session.js";
import type { TaskViewState } from "./model.js";

const DRAG_MIME = "text/x-caption-id";

export function mount(root: HTMLElement, session: AnnotationSession): void {
  session.onChange(() => render(root, session));
  render(root, session);
}

function el(
  tag: string,
  attrs: Record<string, string> = {},
  children: Array<Node | string> = [],
): HTMLElement {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  for (const child of children)
    node.append(typeof child === "string" ? document.createTextNode(child) : child);
  return node;
}

export function render(root: HTMLElement, session: AnnotationSession): void {
  root.textContent = "";
  root.append(header(session));

  if (session.banner) {
    const banner = el("div", { class: "banner", "data-role": "banner" }, [session.banner]);
    if (session.state?.status === "lease-expired") {
      const button = el("button", { "data-role": "refetch" }, ["fetch a fresh task"]);
      button.addEventListener("click", () => void session.refetch());
      banner.append(" ", button);
    }
    root.append(banner);
  }

  if (session.phase === "done") {
    root.append(
      el("p", { "data-role": "all-done" }, [
        `no tasks remaining; ${session.completed} completed in this session`,
      ]),
    );
    return;
  }
  const state = session.state;
  if (!state) return;

  if (state.error) {
    root.append(el("div", { class: "banner blocking", "data-role": "schema-error" }, [state.error]));
    return; // blocking: nothing else renders on a schema mismatch
  }
  if (state.warning) {
    root.append(el("div", { class: "warning", "data-role": "warning" }, [state.warning]));
  }

  root.append(imagePanel(session, state));
  root.append(rubricPanel(state));
  root.append(trayPanel(session, state));
  root.append(rankingPanel(session, state));
  root.append(submitPanel(session, state));
}

function header(session: AnnotationSession): HTMLElement {
  return el("header", {}, [
    el("h1", {}, ["caption ranking"]),
    el("span", { "data-role": "labeler" }, [`labeler: ${session.labelerId}`]),
  ]);
}

function imagePanel(session: AnnotationSession, state: TaskViewState): HTMLElement {
  const panel = el("section", { class: "image-panel" });
  if (state.task.image_uri) {
    panel.append(
      el("img", {
        src: session.api.imageUrl(state.task.image_id),
        alt: `image ${state.task.image_id}`,
        "data-role": "image",
      }),
    );
  } else {
    panel.append(el("div", { class: "placeholder", "data-role": "image-placeholder" }, ["no image available"]));
  }
  return panel;
}

function rubricPanel(state: TaskViewState): HTMLElement {
  return el(
    "section",
    { class: "rubric", "data-role": "rubric" },
    state.task.rubric.map((item) =>
      el("div", { class: "rubric-item" }, [
        el("strong", {}, [item.name]),
        ` ${item.prompt}`,
      ]),
    ),
  );
}

function captionCard(
  session: AnnotationSession,
  state: TaskViewState,
  captionId: string,
): HTMLElement {
  const caption = state.task.captions.find((c) => c.caption_id === captionId);
  const card = el(
    "div",
    {
      class: "caption-card",
      draggable: "true",
      "data-role": "caption-card",
      "data-caption-id": captionId,
    },
    [el("p", {}, [caption?.text ?? captionId])],
  );
  card.addEventListener("dragstart", (event) => {
    (event as DragEvent).dataTransfer?.setData(DRAG_MIME, captionId);
  });

  const toggles = state.criteria[captionId];
  if (toggles) {
    const box = el("div", { class: "criteria" });
    const accuracy = el("input", {
      type: "checkbox",
      "data-role": "accuracy",
      "data-caption-id": captionId,
    }) as HTMLInputElement;
    accuracy.checked = toggles.accuracy;
    accuracy.addEventListener("change", () =>
      session.toggleAccuracy(captionId, accuracy.checked),
    );
    box.append(el("label", {}, [accuracy, " accurate"]));
    for (const criterion of ["completeness", "vividness", "context"] as const) {
      const select = el("select", {
        "data-role": criterion,
        "data-caption-id": captionId,
      }) as HTMLSelectElement;
      for (const grade of [0, 1, 2]) {
        const option = el("option", { value: String(grade) }, [String(grade)]) as HTMLOptionElement;
        option.selected = toggles[criterion] === grade;
        select.append(option);
      }
      select.addEventListener("change", () =>
        session.grade(captionId, criterion, Number(select.value) as 0 | 1 | 2),
      );
      box.append(el("label", {}, [`${criterion} `, select]));
    }
    card.append(box);
  }
  return card;
}

function draggedCaption(event: Event): string | null {
  const dt = (event as DragEvent).dataTransfer;
  return dt ? dt.getData(DRAG_MIME) || null : null;
}

function dropTarget(node: HTMLElement, onDrop: (captionId: string) => void): void {
  node.addEventListener("dragover", (event) => event.preventDefault());
  node.addEventListener("drop", (event) => {
    event.preventDefault();
    const captionId = draggedCaption(event);
    if (captionId) onDrop(captionId);
  });
}

function trayPanel(session: AnnotationSession, state: TaskViewState): HTMLElement {
  const tray = el("section", { class: "tray", "data-role": "tray" }, [
    el("h2", {}, ["unranked captions (drag into the ranking)"]),
  ]);
  dropTarget(tray, (captionId) => session.dropToTray(captionId));
  for (const captionId of state.tray) tray.append(captionCard(session, state, captionId));
  return tray;
}

function rankingPanel(session: AnnotationSession, state: TaskViewState): HTMLElement {
  const panel = el("section", { class: "ranking", "data-role": "ranking" }, [
    el("h2", {}, ["ranking (best first; drop onto a group to tie)"]),
  ]);

  const gap = (position: number): HTMLElement => {
    const zone = el("div", {
      class: "gap",
      "data-role": "gap",
      "data-position": String(position),
    }, ["drop here for a new rank"]);
    dropTarget(zone, (captionId) => session.dropAsNewGroup(captionId, position));
    return zone;
  };

  panel.append(gap(0));
  state.groups.forEach((group, index) => {
    const box = el("div", {
      class: "group",
      "data-role": "group",
      "data-group-index": String(index),
    }, [el("span", { class: "rank-label" }, [`rank ${index + 1}`])]);
    dropTarget(box, (captionId) => session.dropIntoGroup(captionId, index));
    for (const captionId of group) box.append(captionCard(session, state, captionId));
    panel.append(box);
    panel.append(gap(index + 1));
  });
  return panel;
}

function submitPanel(session: AnnotationSession, state: TaskViewState): HTMLElement {
  const panel = el("section", { class: "submit-panel" });

  if (state.tray.length === 0 && state.groups.length === 1) {
    const confirm = el("input", {
      type: "checkbox",
      "data-role": "all-tied-confirm",
    }) as HTMLInputElement;
    confirm.checked = state.allTiedConfirmed;
    confirm.addEventListener("change", () => session.setAllTied(confirm.checked));
    panel.append(el("label", {}, [confirm, " every caption is genuinely tied"]));
  }

  const button = el("button", { "data-role": "submit" }, ["submit ranking"]) as HTMLButtonElement;
  button.disabled = !session.submittable;
  button.addEventListener("click", () => void session.submit());
  panel.append(button);
  panel.append(el("span", { "data-role": "status" }, [state.status]));
  return panel;
}
