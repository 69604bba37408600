/**
 * The four figure kinds rendered from solver artifacts.
 *
 * Every plot returns the SVG text plus a "series" record carrying the raw
 * column strings that were drawn, so callers (and tests) can verify the
 * plotted data is bit-identical to the files.
 */

import { readdirSync, readFileSync, existsSync } from 'fs'
import { join, basename } from 'path'

import { Figure, heatColor, seriesColor } from './svg.js'
import { Table, numbers, readColumnar, readCsv, requireFile } from './tables.js'

export interface SeriesDump {
  kind: string
  source: string
  series: Array<{
    label: string
    columns: Record<string, string[]>
  }>
  notes?: Record<string, unknown>
}

export interface PlotResult {
  svg: string
  series: SeriesDump
}

function runLabels(scenarioDir: string): string[] {
  const entries = readdirSync(scenarioDir, { withFileTypes: true })
    .filter((e) => e.isDirectory())
    .map((e) => e.name)
  const tts = entries.filter((n) => /^tT[\d.]+$/.test(n))
    .sort((a, b) => Number(a.slice(2)) - Number(b.slice(2)))
  const rest = entries.filter((n) => n === 'pure_mpm')
  return [...tts, ...rest]
}

/** Final surface profiles per transfer time plus the particle-only reference. */
export function plotProfiles(scenarioDir: string): PlotResult {
  const labels = runLabels(scenarioDir)
  if (labels.length === 0) {
    throw new Error(`no run directories under ${scenarioDir} ` +
      '(expected tT*/profile_final.csv)')
  }
  const series: SeriesDump = { kind: 'profiles', source: scenarioDir, series: [] }
  const loaded: Array<{ label: string; x: number[]; y: number[] }> = []
  for (const label of labels) {
    const path = join(scenarioDir, label, 'profile_final.csv')
    requireFile(path, `the final surface profile of run ${label}`)
    const table = readColumnar(path, 'profile')
    series.series.push({
      label,
      columns: {
        bin_center: table.raw['bin_center'],
        elevation: table.raw['elevation'],
      },
    })
    loaded.push({ label, x: numbers(table, 'bin_center'),
                  y: numbers(table, 'elevation') })
  }
  const allX = loaded.flatMap((s) => s.x)
  const allY = loaded.flatMap((s) => s.y)
  const fig = new Figure({
    xmin: Math.min(...allX), xmax: Math.max(...allX),
    ymin: 0, ymax: Math.max(...allY),
  })
  loaded.forEach((s, i) => {
    const color = s.label === 'pure_mpm' ? '#000000' : seriesColor(i)
    fig.line(s.x, s.y, color, s.label === 'pure_mpm' ? 2.4 : 1.6,
      s.label === 'pure_mpm' ? '6 3' : undefined)
  })
  fig.legend(loaded.map((s, i) => ({
    label: s.label,
    color: s.label === 'pure_mpm' ? '#000000' : seriesColor(i),
  })))
  const svg = fig.render(`final runout profiles: ${basename(scenarioDir)}`,
    'x (m)', 'surface elevation (m)')
  return { svg, series }
}

/** R_N or KE/PE0 against time normalized by the collapse critical time. */
export function plotTimeseries(scenarioDir: string,
                               quantity: 'R_N' | 'KE_over_PE0'): PlotResult {
  const labels = runLabels(scenarioDir)
  if (labels.length === 0) {
    throw new Error(`no run directories under ${scenarioDir} ` +
      '(expected tT*/record.csv)')
  }
  const series: SeriesDump = {
    kind: `timeseries:${quantity}`, source: scenarioDir, series: [],
  }
  const loaded: Array<{ label: string; x: number[]; y: number[] }> = []
  let tau = NaN
  for (const label of labels) {
    const recPath = join(scenarioDir, label, 'record.csv')
    requireFile(recPath, `the time series of run ${label}`)
    const metaPath = join(scenarioDir, label, 'metadata.json')
    requireFile(metaPath, 'run metadata with tau_c')
    const meta = JSON.parse(readFileSync(metaPath, 'utf8'))
    tau = Number(meta.tau_c)
    const table = readCsv(recPath, 'record')
    series.series.push({
      label,
      columns: { t: table.raw['t'], [quantity]: table.raw[quantity] },
    })
    loaded.push({
      label,
      x: numbers(table, 't').map((t) => t / tau),
      y: numbers(table, quantity),
    })
  }
  series.notes = { tau_c: tau, x_axis: 't_over_tau_c' }
  const allX = loaded.flatMap((s) => s.x)
  const allY = loaded.flatMap((s) => s.y).filter((v) => Number.isFinite(v))
  const fig = new Figure({
    xmin: 0, xmax: Math.max(...allX),
    ymin: Math.min(0, ...allY), ymax: Math.max(...allY),
  })
  // collapse-phase boundaries: full mobilization and onset of cessation
  fig.vline(1.0, '#888888')
  fig.vline(3.0, '#888888')
  loaded.forEach((s, i) => {
    const color = s.label === 'pure_mpm' ? '#000000' : seriesColor(i)
    fig.line(s.x, s.y, color, 1.6, s.label === 'pure_mpm' ? '6 3' : undefined)
  })
  fig.legend(loaded.map((s, i) => ({
    label: s.label,
    color: s.label === 'pure_mpm' ? '#000000' : seriesColor(i),
  })))
  const ylab = quantity === 'R_N' ? 'normalized runout' : 'KE / PE0'
  const svg = fig.render(`${ylab} vs t/tau_c: ${basename(scenarioDir)}`,
    't / tau_c', ylab)
  return { svg, series }
}

/** Surface error against the two mesh-quality measures, zone shaded. */
export function plotQualityScatter(summaryPaths: string[]): PlotResult {
  if (summaryPaths.length === 0) {
    throw new Error('no summary files matched (expected .../summary.csv)')
  }
  const series: SeriesDump = {
    kind: 'quality_scatter', source: summaryPaths.join(';'), series: [],
  }
  interface Pt { scenario: string; rmse: number; ratio: number; eps: number }
  const pts: Pt[] = []
  let empty = true
  for (const path of summaryPaths) {
    const table = readCsv(path, 'sweep summary')
    series.series.push({
      label: path,
      columns: {
        label: table.raw['label'],
        RMSE: table.raw['RMSE'],
        ratio_avg: table.raw['ratio_avg'],
        eps_q_avg: table.raw['eps_q_avg'],
      },
    })
    const n = table.raw['label'].length
    for (let i = 0; i < n; i++) {
      const rmse = table.raw['RMSE'][i]
      const ratio = table.raw['ratio_avg'][i]
      const eps = table.raw['eps_q_avg'][i]
      if (rmse === '' || ratio === '' || eps === '') continue
      empty = false
      pts.push({ scenario: path, rmse: Number(rmse),
                 ratio: Number(ratio), eps: Number(eps) })
    }
  }
  if (empty) {
    console.warn('warning: summaries contain no quality/RMSE rows; ' +
      'rendering empty axes')
  }
  const rmax = Math.max(0.5, ...pts.map((p) => p.rmse))
  const width = 1000
  const fig = new Figure({ xmin: 0, xmax: 1.05, ymin: 0, ymax: rmax }, width, 430)
  // recommended transfer zone on the ratio axis: ratio >= 0.97
  fig.shade(0.97, 1.05, 0, rmax, '#2ca02c')
  const byScenario = new Map<string, Pt[]>()
  for (const p of pts) {
    const list = byScenario.get(p.scenario) ?? []
    list.push(p)
    byScenario.set(p.scenario, list)
  }
  let i = 0
  const legend: Array<{ label: string; color: string }> = []
  for (const [scenario, list] of byScenario) {
    const color = seriesColor(i++)
    fig.markers(list.map((p) => p.ratio), list.map((p) => p.rmse), color)
    legend.push({ label: basename(scenario.replace(/\/summary\.csv$/, '')) ||
      scenario, color })
  }
  fig.legend(legend)
  const svg = fig.render('surface error vs mesh quality at transfer',
    'average Jacobian ratio (yielded elements)', 'profile RMSE')

  // second panel against the strain measure, zone eps <= 0.20
  const emax = Math.max(0.3, ...pts.map((p) => p.eps))
  const fig2 = new Figure({ xmin: 0, xmax: emax, ymin: 0, ymax: rmax }, width, 430)
  fig2.shade(0, 0.20, 0, rmax, '#2ca02c')
  i = 0
  for (const [, list] of byScenario) {
    const color = seriesColor(i++)
    fig2.markers(list.map((p) => p.eps), list.map((p) => p.rmse), color)
  }
  fig2.legend(legend)
  const svg2 = fig2.render('surface error vs average deviatoric strain',
    'average deviatoric strain (yielded elements)', 'profile RMSE')
  const stacked = svg.replace('</svg>', '') +
    `<g transform="translate(0 430)">` +
    svg2.replace(/^<svg[^>]*>/, '').replace('</svg>', '') + '</g></svg>'
  const withHeight = stacked.replace(/height="430"/, 'height="860"')
  return { svg: withHeight, series }
}

/** Particle cloud colored by a stress or strain field. */
export function plotField(framePath: string, field: 'syy' | 'eps_q'): PlotResult {
  requireFile(framePath, 'a particle frame file')
  const table = readColumnar(framePath, 'particle frame')
  if (!(field in table.raw)) {
    throw new Error(`unknown field '${field}'; frame has: ` +
      table.columns.join(', '))
  }
  const series: SeriesDump = {
    kind: `field:${field}`, source: framePath,
    series: [{
      label: basename(framePath),
      columns: { x: table.raw['x'], y: table.raw['y'], [field]: table.raw[field] },
    }],
  }
  const xs = numbers(table, 'x')
  const ys = numbers(table, 'y')
  const vals = numbers(table, field)
  const vmin = Math.min(...vals)
  const vmax = Math.max(...vals)
  const range = vmax - vmin
  const colors = vals.map((v) =>
    heatColor(range > 0 ? (v - vmin) / range : 0.5))
  const fig = new Figure({
    xmin: Math.min(...xs), xmax: Math.max(...xs),
    ymin: Math.min(...ys), ymax: Math.max(...ys),
  }, 900, 420)
  fig.dots(xs, ys, colors, 1.6)
  fig.text(72, 24, `${field}: ${vmin.toExponential(3)} .. ` +
    `${vmax.toExponential(3)}`, 11)
  const svg = fig.render(`${field} snapshot: ${basename(framePath)}`,
    'x (m)', 'y (m)')
  series.notes = { vmin, vmax }
  return { svg, series }
}
