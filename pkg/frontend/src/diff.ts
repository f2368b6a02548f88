/** Word-level diff between two query strings (LCS-based). */

export interface WordDiff {
  aWords: string[];
  bWords: string[];
  aChanged: Set<number>;
  bChanged: Set<number>;
}

export function splitWords(text: string): string[] {
  return text.split(/\s+/).filter((w) => w.length > 0);
}

export function diffWords(a: string, b: string): WordDiff {
  const aWords = splitWords(a);
  const bWords = splitWords(b);
  const n = aWords.length;
  const m = bWords.length;
  // LCS table over words
  const lcs: number[][] = Array.from({ length: n + 1 }, () => new Array(m + 1).fill(0));
  for (let i = n - 1; i >= 0; i--) {
    for (let j = m - 1; j >= 0; j--) {
      lcs[i][j] =
        aWords[i] === bWords[j]
          ? lcs[i + 1][j + 1] + 1
          : Math.max(lcs[i + 1][j], lcs[i][j + 1]);
    }
  }
  const aChanged = new Set<number>();
  const bChanged = new Set<number>();
  let i = 0;
  let j = 0;
  while (i < n && j < m) {
    if (aWords[i] === bWords[j]) {
      i++;
      j++;
    } else if (lcs[i + 1][j] >= lcs[i][j + 1]) {
      aChanged.add(i++);
    } else {
      bChanged.add(j++);
    }
  }
  while (i < n) aChanged.add(i++);
  while (j < m) bChanged.add(j++);
  return { aWords, bWords, aChanged, bChanged };
}
