/**
 * femmpm-plot <kind> --in <dir|glob> --out <file.svg> [options]
 *
 * kinds:
 *   profiles   --in <scenario dir with tT* run folders>
 *   timeseries --in <scenario dir> [--quantity R_N|KE_over_PE0]
 *   quality    --in <summary.csv | glob over summary files>
 *   field      --in <particle frame file> [--field syy|eps_q]
 *
 * Next to the SVG a <out>.series.json records the exact column strings that
 * were plotted, for downstream verification against the source files.
 */

import { readdirSync, statSync, writeFileSync } from 'fs'
import { join } from 'path'

import { PlotResult, plotField, plotProfiles, plotQualityScatter,
         plotTimeseries } from './plots.js'

/** expand simple '*' patterns, one directory level per wildcard segment */
export function expandGlob(pattern: string): string[] {
  const segments = pattern.split('/')
  let candidates = [pattern.startsWith('/') ? '/' : '.']
  for (const seg of segments) {
    if (seg === '' || seg === '.') continue
    const next: string[] = []
    for (const base of candidates) {
      if (seg.includes('*')) {
        const re = new RegExp('^' + seg.split('*').map(escapeRe).join('.*') + '$')
        let names: string[] = []
        try {
          names = readdirSync(base)
        } catch {
          continue
        }
        for (const name of names.sort()) {
          if (re.test(name)) next.push(join(base, name))
        }
      } else {
        next.push(join(base, seg))
      }
    }
    candidates = next
  }
  return candidates.filter((p) => {
    try {
      return statSync(p).isFile() || statSync(p).isDirectory()
    } catch {
      return false
    }
  })
}

function escapeRe(s: string): string {
  return s.replace(/[.*+?^${}()|[\]\\]/g, '\\$&')
}

interface Args {
  kind: string
  input: string
  out: string
  quantity: 'R_N' | 'KE_over_PE0'
  field: 'syy' | 'eps_q'
}

function parseArgs(argv: string[]): Args {
  const [kind, ...rest] = argv
  const args: Args = {
    kind: kind ?? '', input: '', out: '',
    quantity: 'R_N', field: 'syy',
  }
  for (let i = 0; i < rest.length; i += 2) {
    const key = rest[i]
    const value = rest[i + 1]
    if (value === undefined) throw new Error(`missing value for ${key}`)
    switch (key) {
      case '--in': args.input = value; break
      case '--out': args.out = value; break
      case '--quantity':
        if (value !== 'R_N' && value !== 'KE_over_PE0') {
          throw new Error(`--quantity must be R_N or KE_over_PE0, got ${value}`)
        }
        args.quantity = value
        break
      case '--field':
        if (value !== 'syy' && value !== 'eps_q') {
          throw new Error(`--field must be syy or eps_q, got ${value}`)
        }
        args.field = value
        break
      default:
        throw new Error(`unknown option ${key}`)
    }
  }
  if (!args.kind) throw new Error('usage: femmpm-plot <kind> --in ... --out ...')
  if (!args.input || !args.out) throw new Error('--in and --out are required')
  if (!args.out.endsWith('.svg')) {
    throw new Error('only .svg output is supported')
  }
  return args
}

export function run(argv: string[]): number {
  const args = parseArgs(argv)
  let result: PlotResult
  switch (args.kind) {
    case 'profiles':
      result = plotProfiles(args.input)
      break
    case 'timeseries':
      result = plotTimeseries(args.input, args.quantity)
      break
    case 'quality': {
      const matches = args.input.includes('*')
        ? expandGlob(args.input)
        : [args.input]
      result = plotQualityScatter(matches)
      break
    }
    case 'field':
      result = plotField(args.input, args.field)
      break
    default:
      throw new Error(`unknown plot kind '${args.kind}' ` +
        '(profiles | timeseries | quality | field)')
  }
  writeFileSync(args.out, result.svg)
  writeFileSync(args.out.replace(/\.svg$/, '.series.json'),
    JSON.stringify(result.series, null, 2) + '\n')
  console.log(args.out)
  return 0
}

const invokedDirectly = process.argv[1] !== undefined &&
  import.meta.url.endsWith(process.argv[1].split('/').pop() ?? '')
if (invokedDirectly) {
  try {
    process.exit(run(process.argv.slice(2)))
  } catch (err) {
    console.error(`error: ${(err as Error).message}`)
    process.exit(1)
  }
}
