/** Minimal deterministic SVG scene builder: axes, lines, markers, text. */
const PALETTE = ['#1f77b4', '#ff7f0e', '#2ca02c', '#d62728', '#9467bd',
    '#8c564b', '#e377c2', '#7f7f7f', '#bcbd22', '#17becf'];
export function seriesColor(i) {
    return PALETTE[i % PALETTE.length];
}
function fmtTick(v) {
    const a = Math.abs(v);
    if (a !== 0 && (a >= 1e4 || a < 1e-3))
        return v.toExponential(1);
    return String(Number(v.toPrecision(6)));
}
export class Figure {
    width;
    height;
    body = [];
    margin = { left: 62, right: 16, top: 28, bottom: 46 };
    extent;
    constructor(extent, width = 720, height = 420) {
        this.width = width;
        this.height = height;
        const padX = (extent.xmax - extent.xmin) * 0.04 || 1;
        const padY = (extent.ymax - extent.ymin) * 0.06 || 1;
        this.extent = {
            xmin: extent.xmin - padX, xmax: extent.xmax + padX,
            ymin: extent.ymin - padY, ymax: extent.ymax + padY,
        };
    }
    px(x) {
        const { xmin, xmax } = this.extent;
        const w = this.width - this.margin.left - this.margin.right;
        return this.margin.left + ((x - xmin) / (xmax - xmin)) * w;
    }
    py(y) {
        const { ymin, ymax } = this.extent;
        const h = this.height - this.margin.top - this.margin.bottom;
        return this.margin.top + (1 - (y - ymin) / (ymax - ymin)) * h;
    }
    add(fragment) {
        this.body.push(fragment);
    }
    line(xs, ys, color, width = 1.6, dash) {
        const pts = xs.map((x, i) => `${this.px(x).toFixed(2)},${this.py(ys[i]).toFixed(2)}`);
        const dashAttr = dash ? ` stroke-dasharray="${dash}"` : '';
        this.add(`<polyline points="${pts.join(' ')}" fill="none" ` +
            `stroke="${color}" stroke-width="${width}"${dashAttr}/>`);
    }
    markers(xs, ys, color, r = 3.2) {
        for (let i = 0; i < xs.length; i++) {
            this.add(`<circle cx="${this.px(xs[i]).toFixed(2)}" ` +
                `cy="${this.py(ys[i]).toFixed(2)}" r="${r}" fill="${color}"/>`);
        }
    }
    dots(xs, ys, colors, r) {
        for (let i = 0; i < xs.length; i++) {
            this.add(`<circle cx="${this.px(xs[i]).toFixed(2)}" ` +
                `cy="${this.py(ys[i]).toFixed(2)}" r="${r}" fill="${colors[i]}"/>`);
        }
    }
    shade(x0, x1, y0, y1, color, opacity = 0.15) {
        const px0 = this.px(Math.max(x0, this.extent.xmin));
        const px1 = this.px(Math.min(x1, this.extent.xmax));
        const py1 = this.py(Math.max(y0, this.extent.ymin));
        const py0 = this.py(Math.min(y1, this.extent.ymax));
        this.add(`<rect x="${px0.toFixed(2)}" y="${py0.toFixed(2)}" ` +
            `width="${(px1 - px0).toFixed(2)}" height="${(py1 - py0).toFixed(2)}" ` +
            `fill="${color}" opacity="${opacity}"/>`);
    }
    vline(x, color, dash = '4 3') {
        this.line([x, x], [this.extent.ymin, this.extent.ymax], color, 1.0, dash);
    }
    text(x, y, s, size = 12, anchor = 'start') {
        this.add(`<text x="${x.toFixed(1)}" y="${y.toFixed(1)}" ` +
            `font-family="sans-serif" font-size="${size}" ` +
            `text-anchor="${anchor}">${escapeXml(s)}</text>`);
    }
    legend(entries) {
        let y = this.margin.top + 8;
        const x = this.width - this.margin.right - 150;
        for (const { label, color } of entries) {
            this.add(`<line x1="${x}" y1="${y - 4}" x2="${x + 22}" y2="${y - 4}" ` +
                `stroke="${color}" stroke-width="2.5"/>`);
            this.text(x + 28, y, label, 11);
            y += 16;
        }
    }
    axes(title, xlabel, ylabel) {
        const { left, right, top, bottom } = this.margin;
        const x0 = left;
        const x1 = this.width - right;
        const y0 = this.height - bottom;
        const y1 = top;
        const parts = [];
        parts.push(`<rect x="${x0}" y="${y1}" width="${x1 - x0}" ` +
            `height="${y0 - y1}" fill="none" stroke="#333"/>`);
        const nt = 6;
        for (let i = 0; i <= nt; i++) {
            const fx = this.extent.xmin + ((this.extent.xmax - this.extent.xmin) * i) / nt;
            const fy = this.extent.ymin + ((this.extent.ymax - this.extent.ymin) * i) / nt;
            const px = this.px(fx);
            const py = this.py(fy);
            parts.push(`<line x1="${px.toFixed(1)}" y1="${y0}" x2="${px.toFixed(1)}" ` +
                `y2="${y0 + 5}" stroke="#333"/>`);
            parts.push(`<text x="${px.toFixed(1)}" y="${y0 + 18}" font-family="sans-serif" ` +
                `font-size="10" text-anchor="middle">${fmtTick(fx)}</text>`);
            parts.push(`<line x1="${x0 - 5}" y1="${py.toFixed(1)}" x2="${x0}" ` +
                `y2="${py.toFixed(1)}" stroke="#333"/>`);
            parts.push(`<text x="${x0 - 8}" y="${(py + 3).toFixed(1)}" font-family="sans-serif" ` +
                `font-size="10" text-anchor="end">${fmtTick(fy)}</text>`);
        }
        parts.push(`<text x="${(x0 + x1) / 2}" y="${this.height - 10}" font-family="sans-serif" ` +
            `font-size="12" text-anchor="middle">${escapeXml(xlabel)}</text>`);
        parts.push(`<text x="16" y="${(y0 + y1) / 2}" font-family="sans-serif" font-size="12" ` +
            `text-anchor="middle" transform="rotate(-90 16 ${(y0 + y1) / 2})">` +
            `${escapeXml(ylabel)}</text>`);
        parts.push(`<text x="${(x0 + x1) / 2}" y="18" font-family="sans-serif" ` +
            `font-size="13" text-anchor="middle">${escapeXml(title)}</text>`);
        return parts.join('\n');
    }
    render(title, xlabel, ylabel) {
        return [
            `<svg xmlns="http://www.w3.org/2000/svg" width="${this.width}" ` +
                `height="${this.height}" viewBox="0 0 ${this.width} ${this.height}">`,
            `<rect width="100%" height="100%" fill="white"/>`,
            this.axes(title, xlabel, ylabel),
            ...this.body,
            '</svg>',
        ].join('\n');
    }
}
function escapeXml(s) {
    return s.replace(/&/g, '&amp;').replace(/</g, '&lt;').replace(/>/g, '&gt;');
}
/** blue -> yellow -> red ramp for field snapshots */
export function heatColor(t) {
    const clamp = Math.max(0, Math.min(1, t));
    const stops = [
        [0.0, [33, 102, 172]],
        [0.5, [247, 247, 130]],
        [1.0, [178, 24, 43]],
    ];
    for (let i = 0; i < stops.length - 1; i++) {
        const [t0, c0] = stops[i];
        const [t1, c1] = stops[i + 1];
        if (clamp <= t1) {
            const f = (clamp - t0) / (t1 - t0);
            const rgb = c0.map((c, k) => Math.round(c + f * (c1[k] - c)));
            return `rgb(${rgb[0]},${rgb[1]},${rgb[2]})`;
        }
    }
    return 'rgb(178,24,43)';
}
