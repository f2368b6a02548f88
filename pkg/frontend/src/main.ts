import { HttpTransport } from "./api";
import { QuerySession } from "./session";
import { renderBanner, renderComparePanel, renderResultsGrid } from "./render";

const transport = new HttpTransport("");
const session = new QuerySession(transport);

const form = document.getElementById("query-form") as HTMLFormElement;
const input = document.getElementById("query-text") as HTMLInputElement;
const kInput = document.getElementById("query-k") as HTMLInputElement;
const submitBtn = document.getElementById("query-submit") as HTMLButtonElement;
const benchmarkToggle = document.getElementById("benchmark-mode") as HTMLInputElement;
const truthInput = document.getElementById("truth-id") as HTMLInputElement;
const resultsHost = document.getElementById("results")!;
const historyHost = document.getElementById("history")!;
const compareHost = document.getElementById("compare")!;
const compareA = document.getElementById("compare-a") as HTMLSelectElement;
const compareB = document.getElementById("compare-b") as HTMLSelectElement;
const compareBtn = document.getElementById("compare-run") as HTMLButtonElement;
const bannerHost = document.getElementById("banners")!;
const viewerHost = document.getElementById("viewer")!;

function gridOptions() {
  return {
    truthId: benchmarkToggle.checked && truthInput.value ? truthInput.value : undefined,
    onTileClick: openViewer,
  };
}

async function openViewer(id: string) {
  viewerHost.replaceChildren();
  const label = document.createElement("p");
  label.textContent = `model ${id}`;
  viewerHost.appendChild(label);
  try {
    const points = await transport.fetchPoints(id);
    const { createPointCloudViewer } = await import("./viewer");
    createPointCloudViewer(viewerHost, points);
  } catch (err) {
    bannerHost.appendChild(renderBanner(`preview failed: ${err}`));
  }
}

function refreshHistory() {
  historyHost.replaceChildren();
  compareA.replaceChildren();
  compareB.replaceChildren();
  session.history.forEach((entry, idx) => {
    const li = document.createElement("li");
    li.textContent = `[${entry.status}] k=${entry.k} ${entry.text}`;
    li.className = entry.status;
    historyHost.appendChild(li);
    if (entry.status === "ok") {
      for (const select of [compareA, compareB]) {
        const opt = document.createElement("option");
        opt.value = String(idx);
        opt.textContent = `${idx}: ${entry.text}`;
        select.appendChild(opt);
      }
    }
  });
  compareBtn.disabled = compareA.options.length < 2;
}

async function submit(text: string, k: number) {
  submitBtn.disabled = true; // one in-flight query per session
  try {
    const entry = await session.submit(text, k);
    if (entry.status === "ok") {
      resultsHost.replaceChildren(renderResultsGrid(entry, gridOptions()));
    } else if (entry.status === "failed") {
      bannerHost.appendChild(
        renderBanner(`query failed: ${entry.error ?? "service error"}`, () => submit(text, k)),
      );
    }
  } finally {
    submitBtn.disabled = false;
    refreshHistory();
  }
}

form.addEventListener("submit", (ev) => {
  ev.preventDefault();
  const text = input.value.trim();
  if (!text) return;
  session.activeK = Math.max(1, Number(kInput.value) || 10);
  void submit(text, session.activeK);
});

compareBtn.addEventListener("click", () => {
  const i = Number(compareA.value);
  const j = Number(compareB.value);
  if (!session.setCompare(i, j)) return;
  compareHost.replaceChildren(
    renderComparePanel(session.history[i], session.history[j], gridOptions()),
  );
});
