/**
 * Deterministic class colors: same class_index, same color, in every session
 * and after every re-match. Hue spacing by the golden angle keeps neighboring
 * class indices visually distinct.
 */

export interface Rgb {
  r: number;
  g: number;
  b: number;
}

const GOLDEN_ANGLE = 137.50776405003785;

function hslToRgb(h: number, s: number, l: number): Rgb {
  const c = (1 - Math.abs(2 * l - 1)) * s;
  const hp = h / 60;
  const x = c * (1 - Math.abs((hp % 2) - 1));
  let rgb: [number, number, number];
  if (hp < 1) rgb = [c, x, 0];
  else if (hp < 2) rgb = [x, c, 0];
  else if (hp < 3) rgb = [0, c, x];
  else if (hp < 4) rgb = [0, x, c];
  else if (hp < 5) rgb = [x, 0, c];
  else rgb = [c, 0, x];
  const m = l - c / 2;
  return {
    r: Math.round((rgb[0] + m) * 255),
    g: Math.round((rgb[1] + m) * 255),
    b: Math.round((rgb[2] + m) * 255),
  };
}

export function classColor(classIndex: number): Rgb {
  const hue = ((classIndex * GOLDEN_ANGLE) % 360 + 360) % 360;
  return hslToRgb(hue, 0.75, 0.55);
}

export function classColorCss(classIndex: number, alpha = 1): string {
  const { r, g, b } = classColor(classIndex);
  return `rgba(${r}, ${g}, ${b}, ${alpha})`;
}
