/**
 * Readers for the solver's columnar artifacts.
 *
 * Values are kept as the raw strings found in the files so that a plotted
 * series can be compared byte-for-byte against the source columns; numeric
 * views are derived on demand for scaling only.
 */
import { readFileSync, existsSync } from 'fs';
export function requireFile(path, hint) {
    if (!existsSync(path)) {
        throw new Error(`missing input file: ${path} (expected ${hint})`);
    }
}
function parseDelimited(text, sep) {
    const lines = text.split('\n').filter((l) => l.trim().length > 0);
    if (lines.length === 0)
        throw new Error('empty table');
    const columns = lines[0].trim().split(sep);
    const raw = {};
    for (const c of columns)
        raw[c] = [];
    for (const line of lines.slice(1)) {
        const cells = line.trim().split(sep);
        columns.forEach((c, i) => raw[c].push(cells[i] ?? ''));
    }
    return { columns, raw };
}
/** comma-separated artifact with a header row (record.csv, summary.csv) */
export function readCsv(path, hint = 'a csv artifact') {
    requireFile(path, hint);
    return parseDelimited(readFileSync(path, 'utf8'), ',');
}
/** whitespace-separated artifact with a header row (profiles, frames) */
export function readColumnar(path, hint = 'a columnar artifact') {
    requireFile(path, hint);
    return parseDelimited(readFileSync(path, 'utf8'), /\s+/);
}
export function numbers(table, column) {
    const col = table.raw[column];
    if (!col)
        throw new Error(`table has no column '${column}'`);
    return col.map(Number);
}
