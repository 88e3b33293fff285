/** DOM wiring for the expression editor page. */

import { InferenceClient, ModelInfo } from "./api.js";
import { EditorController } from "./editor.js";
import { fetchFilmstrip, sweepLabels } from "./sweep.js";

const AU_NAMES = [
  "AU1", "AU2", "AU4", "AU5", "AU6", "AU9", "AU12", "AU15", "AU17", "AU20", "AU25", "AU26",
];
const EMOTION_NAMES = [
  "neutral", "happiness", "sadness", "anger", "disgust", "contempt", "fear", "surprise",
];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function showError(message: string): void {
  const banner = el<HTMLDivElement>("error-banner");
  banner.textContent = message;
  banner.style.display = "block";
  setTimeout(() => (banner.style.display = "none"), 4000);
}

function fileToBase64(file: File): Promise<string> {
  return new Promise((resolve, reject) => {
    const reader = new FileReader();
    reader.onload = () => {
      const url = reader.result as string;
      resolve(url.slice(url.indexOf(",") + 1)); // strip the data-URL prefix
    };
    reader.onerror = () => reject(reader.error);
    reader.readAsDataURL(file);
  });
}

function buildAuSliders(controller: EditorController, host: HTMLElement): void {
  AU_NAMES.forEach((name, index) => {
    const row = document.createElement("label");
    row.className = "slider-row";
    const text = document.createElement("span");
    text.textContent = name;
    const input = document.createElement("input");
    input.type = "range";
    input.min = "0";
    input.max = "1";
    input.step = "0.01";
    input.value = "0";
    input.addEventListener("input", () => controller.setSlider(index, Number(input.value)));
    row.append(text, input);
    host.appendChild(row);
  });
}

function buildEmotionControls(controller: EditorController, host: HTMLElement): void {
  const primary = document.createElement("select");
  const secondary = document.createElement("select");
  const none = document.createElement("option");
  none.value = "";
  none.textContent = "(no blend)";
  secondary.appendChild(none);
  EMOTION_NAMES.forEach((name, i) => {
    for (const select of [primary, secondary]) {
      const option = document.createElement("option");
      option.value = String(i);
      option.textContent = name;
      select.appendChild(option);
    }
  });
  const blend = document.createElement("input");
  blend.type = "range";
  blend.min = "0";
  blend.max = "1";
  blend.step = "0.01";
  blend.value = "0.5"; // two-class blends default to an even mix

  const update = () => {
    const label = new Array(controller.modelInfo.label_dim).fill(0);
    const a = Number(primary.value);
    if (secondary.value === "") {
      label[a] = 1;
    } else {
      const w = Number(blend.value);
      label[a] = w;
      label[Number(secondary.value)] += 1 - w;
    }
    controller.setLabel(label);
  };
  for (const control of [primary, secondary, blend]) {
    control.addEventListener("input", update);
  }
  const blendRow = document.createElement("label");
  blendRow.className = "slider-row";
  const caption = document.createElement("span");
  caption.textContent = "blend";
  blendRow.append(caption, blend);
  host.append(primary, secondary, blendRow);
}

async function start(): Promise<void> {
  const baseUrl = (el<HTMLInputElement>("base-url").value || "http://127.0.0.1:8000").replace(/\/$/, "");
  const client = new InferenceClient(baseUrl);
  let info: ModelInfo;
  try {
    info = await client.modelInfo();
  } catch (error) {
    showError(`cannot reach service: ${String(error)}`);
    return;
  }
  el<HTMLSpanElement>("model-label").textContent =
    `${info.label_mode} model, skip ${info.skip_position}, z=${info.z_dim}`;

  const controller = new EditorController(info, (request) => client.synthesize(request), {
    onResult: (image) => {
      el<HTMLImageElement>("result").src = `data:image/png;base64,${image}`;
    },
    onError: showError,
    onBusy: (busy) => {
      el<HTMLSpanElement>("busy").style.visibility = busy ? "visible" : "hidden";
    },
  });

  const sliderHost = el<HTMLDivElement>("sliders");
  sliderHost.replaceChildren();
  if (info.label_mode === "au") {
    buildAuSliders(controller, sliderHost);
  } else {
    buildEmotionControls(controller, sliderHost);
  }

  el<HTMLInputElement>("upload").addEventListener("change", async (event) => {
    const file = (event.target as HTMLInputElement).files?.[0];
    if (!file) return;
    const b64 = await fileToBase64(file);
    el<HTMLImageElement>("source-preview").src = `data:image/png;base64,${b64}`;
    controller.setSource(b64);
  });

  const axisSelect = el<HTMLSelectElement>("sweep-axis");
  axisSelect.replaceChildren();
  const axisNames = info.label_mode === "au" ? AU_NAMES : EMOTION_NAMES;
  axisNames.forEach((name, i) => {
    const option = document.createElement("option");
    option.value = String(i);
    option.textContent = name;
    axisSelect.appendChild(option);
  });

  el<HTMLButtonElement>("sweep-run").addEventListener("click", async () => {
    if (!controller.sourceImage) {
      showError("upload a face first");
      return;
    }
    const steps = Number(el<HTMLInputElement>("sweep-steps").value) || 6;
    const labels = sweepLabels([...controller.sliders], Number(axisSelect.value), steps);
    const frames = await fetchFilmstrip(
      (request) => client.synthesize(request), controller.sourceImage, labels,
    );
    const strip = el<HTMLDivElement>("filmstrip");
    strip.replaceChildren();
    for (const frame of frames) {
      if (frame.image) {
        const img = document.createElement("img");
        img.src = `data:image/png;base64,${frame.image}`;
        img.width = 64;
        img.height = 64;
        strip.appendChild(img);
      } else {
        const fail = document.createElement("span");
        fail.className = "frame-error";
        fail.title = frame.error ?? "failed";
        fail.textContent = "✕";
        strip.appendChild(fail);
      }
    }
  });
}

el<HTMLButtonElement>("connect").addEventListener("click", () => {
  void start();
});
