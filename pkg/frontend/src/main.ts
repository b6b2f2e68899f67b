/** Browser bootstrap: same-origin API, labeler id from query or prompt. */

import { AnnotationApi } from "./api.js";
import { mount } from "./dom.js";
import { AnnotationSession } from "./session.js";

function labelerId(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("labeler");
  if (fromQuery) {
    window.localStorage.setItem("caprank-labeler", fromQuery);
    return fromQuery;
  }
  const stored = window.localStorage.getItem("caprank-labeler");
  if (stored) return stored;
  const entered = window.prompt("labeler id:") || "anonymous";
  window.localStorage.setItem("caprank-labeler", entered);
  return entered;
}

export function boot(root: HTMLElement, baseUrl = ""): AnnotationSession {
  const session = new AnnotationSession(new AnnotationApi(baseUrl), labelerId());
  mount(root, session);
  void session.start();
  return session;
}

const appRoot = typeof document !== "undefined" ? document.getElementById("app") : null;
if (appRoot) boot(appRoot);
