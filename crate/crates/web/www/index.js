import init, { melImage, wavMelImage, filterbankImage, normalizedImage } from "./pkg/audiolayers_web.js";

function draw(section, make) {
  const canvas = section.querySelector("canvas");
  const status = section.querySelector(".status");
  try {
    const t0 = performance.now();
    const img = make();
    canvas.width = img.width;
    canvas.height = img.height;
    const data = new ImageData(new Uint8ClampedArray(img.pixels), img.width, img.height);
    canvas.getContext("2d").putImageData(data, 0, 0);
    status.className = "status";
    status.textContent = `${img.height} x ${img.width}, values ${img.min.toFixed(2)} to ${img.max.toFixed(2)}, ${(performance.now() - t0).toFixed(0)} ms`;
    img.free();
  } catch (e) {
    status.className = "status error";
    status.textContent = String(e.message ?? e);
  }
}

const field = (section, name) => section.querySelector(`[name=${name}]`);
const num = (section, name) => Number(field(section, name).value);

function wire(id, render) {
  const section = document.getElementById(id);
  section.addEventListener("change", (event) => render(section, event));
  render(section);
}

let wavBytes = null;

await init();

wire("mel", (s, event) => {
  if (event?.target?.name === "wav") wavBytes = null;
  const file = field(s, "wav").files[0];
  const args = [num(s, "n_dft"), num(s, "n_mels"), field(s, "scale").value];
  if (file && !wavBytes) {
    file.arrayBuffer().then((buf) => {
      wavBytes = new Uint8Array(buf);
      draw(s, () => wavMelImage(wavBytes, ...args));
    });
    return;
  }
  if (!file) wavBytes = null;
  if (wavBytes) {
    draw(s, () => wavMelImage(wavBytes, ...args));
  } else {
    draw(s, () => melImage(field(s, "kind").value, num(s, "freq"), num(s, "seconds"), ...args));
  }
});

wire("fb", (s) =>
  draw(s, () => filterbankImage(field(s, "scale").value, num(s, "n_mels"), num(s, "n_dft"), num(s, "fmin"), num(s, "fmax"))),
);

wire("norm", (s) =>
  draw(s, () => normalizedImage(field(s, "kind").value, field(s, "axis").value, num(s, "power"), num(s, "seed"))),
);
