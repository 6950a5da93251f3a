/**
 * Tile color mapping. Documented contract:
 *
 * - A tile flagged over-threshold by the service renders the palette's
 *   solid `flagged` color. The UI never thresholds on its own.
 * - Otherwise the fill interpolates linearly in sRGB between `low` (0 N)
 *   and `high` (at the threshold): t = clamp(force / threshold, 0, 1),
 *   channel = round(low + t * (high - low)).
 *
 * Two palettes ship: `classic`, and a `colorblind` alternative whose ramp
 * runs blue to yellow with a purple flag color, distinguishable under
 * deuteranopia/protanopia where the classic red flag is not.
 */

export interface Palette {
  name: string;
  low: string; // 0 N
  high: string; // at threshold
  flagged: string; // over-threshold, solid
  inert: string; // dummy frets, no sensor
}

export const PALETTES = {
  classic: {
    name: "classic",
    low: "#1b2a41",
    high: "#ffc857",
    flagged: "#d7263d",
    inert: "#14181f",
  },
  colorblind: {
    name: "colorblind",
    low: "#0b3954",
    high: "#ffd166",
    flagged: "#9b5de5",
    inert: "#14181f",
  },
} satisfies Record<string, Palette>;

function hexToRgb(hex: string): [number, number, number] {
  const v = parseInt(hex.slice(1), 16);
  return [(v >> 16) & 0xff, (v >> 8) & 0xff, v & 0xff];
}

function rgbToHex(r: number, g: number, b: number): string {
  const pack = (n: number) => n.toString(16).padStart(2, "0");
  return `#${pack(r)}${pack(g)}${pack(b)}`;
}

/** Ramp position for a force against the active threshold, clamped [0,1]. */
export function rampT(force: number, threshold: number): number {
  if (!(threshold > 0)) return 0;
  return Math.min(1, Math.max(0, force / threshold));
}

export function rampColor(t: number, palette: Palette): string {
  const lo = hexToRgb(palette.low);
  const hi = hexToRgb(palette.high);
  const mix = lo.map((c, i) => Math.round(c + t * ((hi[i] as number) - c)));
  return rgbToHex(mix[0] as number, mix[1] as number, mix[2] as number);
}

/** The one function the board uses: red wins, then the ramp. */
export function tileColor(
  force: number,
  over: boolean,
  threshold: number,
  palette: Palette,
): string {
  if (over) return palette.flagged;
  return rampColor(rampT(force, threshold), palette);
}
