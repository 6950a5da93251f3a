/**
 * Board geometry for the SVG view. Fret positions follow equal
 * temperament, d(k) = L * (1 - 2^(-k/12)), and the board width tapers
 * linearly with distance from the nut, mirroring the core model: the
 * drawing is a faithful (scaled) fretboard, not an abstract grid.
 *
 * 19 frets are drawn; only frets 1..12 carry sensing tiles. The lower 7
 * are structural dummies and never display force.
 */

export const ACTIVE_FRETS = 12;
export const TOTAL_FRETS = 19;
export const STRINGS = 6;

export function fretFraction(k: number): number {
  return 1 - Math.pow(2, -k / 12);
}

export interface TileBox {
  fret: number; // 1..12
  string: number; // 1..6
  index: number; // (fret-1)*6 + (string-1)
  cx: number;
  cy: number;
  rx: number;
  ry: number;
}

export interface BoardLayout {
  width: number;
  height: number;
  /** y of each drawn fret bar, index 0 = nut, 1..19 = frets */
  fretY: number[];
  /** board half-width at each fret bar y, for the tapered outline */
  halfWidthAt: (y: number) => number;
  outline: string; // svg path
  tiles: TileBox[];
  dummyRows: { fret: number; y0: number; y1: number }[];
}

export function boardLayout(
  width = 300,
  height = 760,
  nutWidthMm = 52,
  fret12WidthMm = 62,
  margin = 14,
): BoardLayout {
  // Scale so the 19-fret span fills the drawing height.
  const span = fretFraction(TOTAL_FRETS);
  const yOf = (k: number) => margin + (fretFraction(k) / span) * (height - 2 * margin);
  const fretY = Array.from({ length: TOTAL_FRETS + 1 }, (_, k) => yOf(k));

  // Width taper is linear in distance from the nut, anchored at fret 12,
  // same rule the sensing model uses for stiffness scaling.
  const widthMmAt = (y: number) => {
    const d = (y - (fretY[0] as number)) / ((fretY[12] as number) - (fretY[0] as number));
    return nutWidthMm + (fret12WidthMm - nutWidthMm) * d;
  };
  const pxPerMm = (width - 2 * margin) / widthMmAt(fretY[TOTAL_FRETS] as number);
  const halfWidthAt = (y: number) => (widthMmAt(y) * pxPerMm) / 2;

  const cx = width / 2;
  const yTop = fretY[0] as number;
  const yBot = fretY[TOTAL_FRETS] as number;
  const outline =
    `M ${cx - halfWidthAt(yTop)} ${yTop} ` +
    `L ${cx + halfWidthAt(yTop)} ${yTop} ` +
    `L ${cx + halfWidthAt(yBot)} ${yBot} ` +
    `L ${cx - halfWidthAt(yBot)} ${yBot} Z`;

  const tiles: TileBox[] = [];
  for (let fret = 1; fret <= ACTIVE_FRETS; fret++) {
    const y0 = fretY[fret - 1] as number;
    const y1 = fretY[fret] as number;
    const cy = (y0 + y1) / 2;
    const hw = halfWidthAt(cy);
    for (let s = 1; s <= STRINGS; s++) {
      // String s sits at a tapered lane center; lane 1 leftmost.
      const lane = (s - 0.5) / STRINGS;
      tiles.push({
        fret,
        string: s,
        index: (fret - 1) * 6 + (s - 1),
        cx: cx - hw + lane * 2 * hw,
        cy,
        rx: (2 * hw) / STRINGS / 2 - 2,
        ry: (y1 - y0) / 2 - 2,
      });
    }
  }

  const dummyRows = [];
  for (let fret = ACTIVE_FRETS + 1; fret <= TOTAL_FRETS; fret++) {
    dummyRows.push({
      fret,
      y0: fretY[fret - 1] as number,
      y1: fretY[fret] as number,
    });
  }

  return { width, height, fretY, halfWidthAt, outline, tiles, dummyRows };
}
