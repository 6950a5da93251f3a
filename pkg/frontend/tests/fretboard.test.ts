import { describe, expect, test } from "vitest";
import {
  ACTIVE_FRETS,
  STRINGS,
  TOTAL_FRETS,
  boardLayout,
  fretFraction,
} from "../src/fretboard.js";

describe("fretFraction", () => {
  test("fret 12 is the exact half scale point", () => {
    expect(fretFraction(12)).toBe(0.5);
  });

  test("strictly increasing and below 1", () => {
    for (let k = 1; k <= TOTAL_FRETS; k++) {
      expect(fretFraction(k)).toBeGreaterThan(fretFraction(k - 1));
      expect(fretFraction(k)).toBeLessThan(1);
    }
  });
});

describe("boardLayout", () => {
  const layout = boardLayout();

  test("one tile per sensing module, none on dummy frets", () => {
    expect(layout.tiles).toHaveLength(ACTIVE_FRETS * STRINGS);
    for (const t of layout.tiles) {
      expect(t.fret).toBeGreaterThanOrEqual(1);
      expect(t.fret).toBeLessThanOrEqual(ACTIVE_FRETS);
      expect(t.index).toBe((t.fret - 1) * STRINGS + (t.string - 1));
    }
    const seen = new Set(layout.tiles.map((t) => t.index));
    expect(seen.size).toBe(ACTIVE_FRETS * STRINGS);
  });

  test("draws out to fret 19 with monotone spacing", () => {
    expect(layout.fretY).toHaveLength(TOTAL_FRETS + 1);
    expect(layout.dummyRows).toHaveLength(TOTAL_FRETS - ACTIVE_FRETS);
    expect(layout.dummyRows.map((r) => r.fret)).toEqual([13, 14, 15, 16, 17, 18, 19]);
    for (let i = 1; i < layout.fretY.length; i++) {
      expect(layout.fretY[i]!).toBeGreaterThan(layout.fretY[i - 1]!);
    }
    // Fret gaps shrink toward the bridge.
    const gap = (i: number) => layout.fretY[i]! - layout.fretY[i - 1]!;
    expect(gap(12)).toBeLessThan(gap(1));
  });

  test("board tapers wider toward fret 12 in the modelled 52:62 ratio", () => {
    const atNut = layout.halfWidthAt(layout.fretY[0]!);
    const atTwelve = layout.halfWidthAt(layout.fretY[12]!);
    expect(atTwelve).toBeGreaterThan(atNut);
    expect(atTwelve / atNut).toBeCloseTo(62 / 52, 6);
  });

  test("tiles stay inside the tapered outline", () => {
    for (const t of layout.tiles) {
      const half = layout.halfWidthAt(t.cy);
      const mid = layout.width / 2;
      expect(t.cx - t.rx).toBeGreaterThanOrEqual(mid - half - 1e-9);
      expect(t.cx + t.rx).toBeLessThanOrEqual(mid + half + 1e-9);
      expect(t.rx).toBeGreaterThan(0);
      expect(t.ry).toBeGreaterThan(0);
    }
  });
});
