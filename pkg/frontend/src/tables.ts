/**
 * Readers for the solver's columnar artifacts.
 *
 * Values are kept as the raw strings found in the files so that a plotted
 * series can be compared byte-for-byte against the source columns; numeric
 * views are derived on demand for scaling only.
 */

import { readFileSync, existsSync } from 'fs'

export interface Table {
  columns: string[]
  /** raw cell text per column name */
  raw: Record<string, string[]>
}

export function requireFile(path: string, hint: string): void {
  if (!existsSync(path)) {
    throw new Error(`missing input file: ${path} (expected ${hint})`)
  }
}

function parseDelimited(text: string, sep: RegExp | string): Table {
  const lines = text.split('\n').filter((l) => l.trim().length > 0)
  if (lines.length === 0) throw new Error('empty table')
  const columns = lines[0].trim().split(sep)
  const raw: Record<string, string[]> = {}
  for (const c of columns) raw[c] = []
  for (const line of lines.slice(1)) {
    const cells = line.trim().split(sep)
    columns.forEach((c, i) => raw[c].push(cells[i] ?? ''))
  }
  return { columns, raw }
}

/** comma-separated artifact with a header row (record.csv, summary.csv) */
export function readCsv(path: string, hint = 'a csv artifact'): Table {
  requireFile(path, hint)
  return parseDelimited(readFileSync(path, 'utf8'), ',')
}

/** whitespace-separated artifact with a header row (profiles, frames) */
export function readColumnar(path: string, hint = 'a columnar artifact'): Table {
  requireFile(path, hint)
  return parseDelimited(readFileSync(path, 'utf8'), /\s+/)
}

export function numbers(table: Table, column: string): number[] {
  const col = table.raw[column]
  if (!col) throw new Error(`table has no column '${column}'`)
  return col.map(Number)
}
