//! Deterministic SVG rendering of run artifacts — no imaging libraries,
//! identical bytes for identical inputs.
//!
//! Three plots:
//! - `scatter.svg`: real samples as crosses, generated samples as dots
//!   colored by the generator most responsible for each one (every
//!   architecture);
//! - `corr.svg`: heatmap of the pairwise correlation between the soft
//!   responsibility columns (tree and flat mixtures);
//! - `tree.svg`: the gating hierarchy with each node's weighted mean
//!   response and, under every leaf, its five strongest exemplars (tree
//!   only).

use crate::runner;
use hmog::interpret;
use hmog::models::{GeneratorModel, GeneratorTree, SharedBlock};
use hmog::{Graph, Result, Tensor};
use rand::SeedableRng;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Render every plot the run's architecture supports. Requires the run
/// directory to hold a checkpoint and the sample CSVs.
pub fn emit_plots(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let (exp, bundle) = runner::load_run(run_dir)?;
    let real = runner::read_real(run_dir)?;
    let (latents, fakes, leaf) = runner::read_samples(run_dir)?;
    let k = bundle.gen.generator_count();

    let mut written = Vec::new();
    let caption = format!(
        "{} seed {} · {} real (crosses) / {} generated (dots)",
        exp.architecture,
        exp.seed,
        real.leading(),
        fakes.leading()
    );
    let label = match &bundle.gen {
        GeneratorModel::Tree { .. } | GeneratorModel::Flat { .. } => "leaf",
        GeneratorModel::Fc { .. } => "fc",
        _ => "gen",
    };
    let svg = scatter_svg(&real, &fakes, &leaf, k, label, &caption);
    let path = run_dir.join("scatter.svg");
    std::fs::write(&path, svg)?;
    written.push(path);

    let corr = match &bundle.gen {
        GeneratorModel::Tree { tree, .. } => Some(interpret::gating_correlation(tree, &latents)?),
        GeneratorModel::Flat { flat, .. } => {
            let mut g = Graph::new();
            let z = g.constant(latents.clone());
            let resp = flat.responsibilities(&mut g, z)?;
            Some(interpret::correlation_of_columns(g.value(resp))?)
        }
        _ => None,
    };
    if let Some(m) = corr {
        let path = run_dir.join("corr.svg");
        std::fs::write(&path, corr_svg(&m))?;
        written.push(path);
    }

    if let GeneratorModel::Tree { tree, shared } = &bundle.gen {
        let path = run_dir.join("tree.svg");
        std::fs::write(&path, tree_svg(tree, shared, &latents, exp.seed)?)?;
        written.push(path);
    }
    Ok(written)
}

// ---------------------------------------------------------------- colors

/// Eight well-separated hues for the benchmark-sized mixtures.
const PALETTE8: [&str; 8] = [
    "#e41a1c", "#377eb8", "#4daf4a", "#984ea3", "#ff7f00", "#a65628", "#f781bf", "#17becf",
];

/// Distinct color for generator `i` of `k`: the fixed palette while it
/// lasts, then evenly spaced hues.
pub fn generator_color(i: usize, k: usize) -> String {
    if k <= PALETTE8.len() {
        PALETTE8[i].to_string()
    } else {
        let hue = 360.0 * i as f64 / k as f64;
        hsl_to_hex(hue, 0.65, 0.45)
    }
}

fn hsl_to_hex(h: f64, s: f64, l: f64) -> String {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    let to255 = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    format!("#{:02x}{:02x}{:02x}", to255(r1), to255(g1), to255(b1))
}

/// White at 0, saturated blue at -1, saturated red at +1.
fn diverging_color(v: f64) -> String {
    let v = v.clamp(-1.0, 1.0);
    let blend = |a: (u8, u8, u8), t: f64| -> String {
        let w = (255.0, 255.0, 255.0);
        let mix = |lo: f64, hi: u8| (lo + (hi as f64 - lo) * t).round() as u8;
        format!("#{:02x}{:02x}{:02x}", mix(w.0, a.0), mix(w.1, a.1), mix(w.2, a.2))
    };
    if v < 0.0 {
        blend((33, 102, 172), -v)
    } else {
        blend((178, 24, 44), v)
    }
}

// ------------------------------------------------------------- svg basics

struct Svg {
    out: String,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Svg {
    fn new(w: f64, h: f64) -> Self {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w:.0} {h:.0}\" width=\"{w:.0}\" height=\"{h:.0}\" font-family=\"sans-serif\">"
        );
        out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n");
        Svg { out }
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }

    fn open_group(&mut self, attrs: &str) {
        let _ = writeln!(self.out, "<g {attrs}>");
    }

    fn close_group(&mut self) {
        self.out.push_str("</g>\n");
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
        let _ = writeln!(
            self.out,
            "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"{stroke}\" stroke-width=\"{width:.2}\"/>"
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, attrs: &str) {
        let _ = writeln!(
            self.out,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" {attrs}/>"
        );
    }

    fn circle(&mut self, cx: f64, cy: f64, r: f64, attrs: &str) {
        let _ = writeln!(self.out, "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"{r:.2}\" {attrs}/>");
    }

    fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, fill: &str, content: &str) {
        let _ = writeln!(
            self.out,
            "<text x=\"{x:.2}\" y=\"{y:.2}\" font-size=\"{size:.1}\" text-anchor=\"{anchor}\" fill=\"{fill}\">{}</text>",
            esc(content)
        );
    }

    /// An ×-shaped marker.
    fn cross(&mut self, x: f64, y: f64, r: f64, stroke: &str) {
        let _ = writeln!(
            self.out,
            "<path d=\"M{:.2} {:.2}L{:.2} {:.2}M{:.2} {:.2}L{:.2} {:.2}\" stroke=\"{stroke}\" stroke-width=\"1.1\" opacity=\"0.55\"/>",
            x - r,
            y - r,
            x + r,
            y + r,
            x - r,
            y + r,
            x + r,
            y - r
        );
    }
}

/// Affine map from a data interval to a pixel interval.
struct Scale {
    lo: f64,
    hi: f64,
    p0: f64,
    p1: f64,
}

impl Scale {
    fn map(&self, v: f64) -> f64 {
        let t = (v - self.lo) / (self.hi - self.lo);
        self.p0 + t * (self.p1 - self.p0)
    }
}

/// Round tick positions covering [lo, hi] with a 1/2/5-style step.
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let range = (hi - lo).max(1e-12);
    let raw = range / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    } * mag;
    let mut v = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while v <= hi + step * 1e-9 {
        // Snap near-zero ticks to exactly zero so labels print "0".
        out.push(if v.abs() < step * 1e-9 { 0.0 } else { v });
        v += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e6 {
        format!("{}", v as i64)
    } else {
        format!("{v:.2}")
    }
}

// ---------------------------------------------------------------- scatter

/// Real samples as crosses, generated ones as dots colored per generator,
/// square axes, and one legend entry per generator.
pub fn scatter_svg(
    real: &Tensor,
    fake: &Tensor,
    leaf: &[usize],
    k: usize,
    leaf_label: &str,
    caption: &str,
) -> String {
    let (w, h) = (710.0, 540.0);
    let (px0, px1, py0, py1) = (60.0, 520.0, 500.0, 40.0);
    let mut svg = Svg::new(w, h);

    // One shared range for both axes keeps the geometry undistorted.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for t in [real, fake] {
        for &v in t.data() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !(lo.is_finite() && hi.is_finite()) {
        lo = -1.0;
        hi = 1.0;
    }
    let pad = 0.06 * (hi - lo).max(1e-6);
    let (lo, hi) = (lo - pad, hi + pad);
    let sx = Scale { lo, hi, p0: px0, p1: px1 };
    let sy = Scale { lo, hi, p0: py0, p1: py1 };

    svg.text(px0, 22.0, 13.0, "start", "#333", caption);

    for t in ticks(lo, hi, 6) {
        let x = sx.map(t);
        let y = sy.map(t);
        svg.line(x, py1, x, py0, "#eee", 1.0);
        svg.line(px0, y, px1, y, "#eee", 1.0);
        svg.text(x, py0 + 16.0, 11.0, "middle", "#666", &fmt_tick(t));
        svg.text(px0 - 8.0, y + 4.0, 11.0, "end", "#666", &fmt_tick(t));
    }
    svg.rect(
        px0,
        py1,
        px1 - px0,
        py0 - py1,
        "fill=\"none\" stroke=\"#999\" stroke-width=\"1\"",
    );

    svg.open_group("class=\"real\"");
    for i in 0..real.leading() {
        svg.cross(sx.map(real.at2(i, 0)), sy.map(real.at2(i, 1)), 3.0, "#555555");
    }
    svg.close_group();

    svg.open_group("class=\"fake\"");
    for i in 0..fake.leading() {
        let color = generator_color(leaf[i].min(k.saturating_sub(1)), k);
        svg.circle(
            sx.map(fake.at2(i, 0)),
            sy.map(fake.at2(i, 1)),
            2.2,
            &format!("fill=\"{color}\" opacity=\"0.75\""),
        );
    }
    svg.close_group();

    // Legend: one swatch per generator.
    svg.open_group("class=\"legend\"");
    svg.text(540.0, py1 + 12.0, 12.0, "start", "#333", "most responsible");
    for i in 0..k {
        let y = py1 + 24.0 + 18.0 * i as f64;
        let color = generator_color(i, k);
        let _ = writeln!(
            svg.out,
            "<rect class=\"legend-entry\" x=\"540\" y=\"{y:.2}\" width=\"12\" height=\"12\" fill=\"{color}\"/>"
        );
        svg.text(558.0, y + 10.0, 12.0, "start", "#333", &format!("{leaf_label} {i}"));
    }
    svg.close_group();
    svg.finish()
}

// ---------------------------------------------------------------- heatmap

/// K×K correlation heatmap; every matrix entry becomes one `class="cell"`
/// rect colored on a blue–white–red diverging scale.
pub fn corr_svg(m: &[Vec<f64>]) -> String {
    let k = m.len();
    let cell = if k <= 16 { 44.0 } else { 24.0 };
    let (left, top) = (64.0, 56.0);
    let w = left + cell * k as f64 + 24.0;
    let h = top + cell * k as f64 + 30.0;
    let mut svg = Svg::new(w, h);
    svg.text(left, 24.0, 13.0, "start", "#333", "responsibility correlation (-1 blue, +1 red)");

    for (i, row) in m.iter().enumerate() {
        let y = top + cell * i as f64;
        svg.text(left - 8.0, y + cell / 2.0 + 4.0, 11.0, "end", "#444", &format!("{i}"));
        svg.text(
            left + cell * i as f64 + cell / 2.0,
            top - 8.0,
            11.0,
            "middle",
            "#444",
            &format!("{i}"),
        );
        for (j, &v) in row.iter().enumerate() {
            let x = left + cell * j as f64;
            svg.rect(
                x,
                y,
                cell,
                cell,
                &format!(
                    "class=\"cell\" fill=\"{}\" stroke=\"#ffffff\" stroke-width=\"1\"",
                    diverging_color(v)
                ),
            );
            if k <= 16 {
                let text_color = if v.abs() > 0.6 { "#ffffff" } else { "#333333" };
                svg.text(
                    x + cell / 2.0,
                    y + cell / 2.0 + 4.0,
                    10.0,
                    "middle",
                    text_color,
                    &format!("{v:.2}"),
                );
            }
        }
    }
    svg.finish()
}

// ------------------------------------------------------------------- tree

/// The gating hierarchy: 2K−1 `class="node"` groups laid out level by
/// level, each showing the node's share of the batch and its weighted mean
/// response; every leaf lists its five strongest exemplar coordinates.
pub fn tree_svg(
    tree: &GeneratorTree,
    shared: &SharedBlock,
    latents: &Tensor,
    seed: u64,
) -> Result<String> {
    let k = tree.leaf_count();
    let depth = tree.depth;
    let n = latents.leading();
    let responses = interpret::node_average_response(tree, shared, latents)?;

    let top = 5.min(n);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(4);
    let exemplars = interpret::top_leaf_exemplars(tree, shared, n.max(top), top, &mut rng)?;

    let col = 150.0;
    let level_h = 115.0;
    let w = col * k as f64;
    let exemplar_block = 16.0 * top as f64 + 30.0;
    let h = 70.0 + level_h * depth as f64 + 60.0 + exemplar_block;
    let mut svg = Svg::new(w, h);
    svg.text(
        16.0,
        24.0,
        13.0,
        "start",
        "#333",
        &format!("gating tree · share of {n} samples · mean response · leaf exemplars"),
    );

    // Heap order: node m has children 2m+1 and 2m+2; level of m is
    // floor(log2(m+1)); leaves occupy the last level.
    let total_nodes = 2 * k - 1;
    let pos = |m: usize| -> (f64, f64) {
        let level = (m + 1).ilog2() as usize;
        let idx_in_level = (m + 1) - (1 << level);
        let cells = 1usize << level;
        let x = w * (idx_in_level as f64 + 0.5) / cells as f64;
        let y = 70.0 + level_h * level as f64;
        (x, y)
    };

    for m in 0..total_nodes {
        let (x, y) = pos(m);
        if 2 * m + 1 < total_nodes {
            let (cx, cy) = pos(2 * m + 1);
            svg.line(x, y, cx, cy, "#bbb", 1.2);
            let (cx, cy) = pos(2 * m + 2);
            svg.line(x, y, cx, cy, "#bbb", 1.2);
        }
    }

    for (m, resp) in responses.iter().enumerate() {
        let (x, y) = pos(m);
        let is_leaf = 2 * m + 1 >= total_nodes;
        svg.open_group("class=\"node\"");
        let fill = if is_leaf {
            generator_color(m + 1 - k, k)
        } else {
            "#e8eef7".to_string()
        };
        let box_w = 120.0;
        let box_h = 46.0;
        svg.rect(
            x - box_w / 2.0,
            y - box_h / 2.0,
            box_w,
            box_h,
            &format!("rx=\"8\" fill=\"{fill}\" fill-opacity=\"0.25\" stroke=\"#888\""),
        );
        let title = if is_leaf {
            format!("leaf {}", m + 1 - k)
        } else if m == 0 {
            "root".to_string()
        } else {
            format!("gate {m}")
        };
        let share = 100.0 * resp.total_weight / n as f64;
        svg.text(x, y - 6.0, 11.0, "middle", "#222", &format!("{title} · {share:.1}%"));
        let mean = match &resp.mean {
            Some(v) => format!("({})", v.iter().map(|c| format!("{c:.2}")).collect::<Vec<_>>().join(", ")),
            None => "no mass".to_string(),
        };
        svg.text(x, y + 10.0, 11.0, "middle", "#222", &mean);
        svg.close_group();
    }

    // Exemplars under each leaf.
    let ex_top = 70.0 + level_h * depth as f64 + 40.0;
    for (leaf_idx, picks) in exemplars.iter().enumerate() {
        let (x, _) = pos(k - 1 + leaf_idx);
        svg.text(x, ex_top, 11.0, "middle", "#555", &format!("top {top} of leaf {leaf_idx}"));
        for (row, e) in picks.iter().enumerate() {
            let coords = e
                .sample
                .iter()
                .map(|c| format!("{c:.2}"))
                .collect::<Vec<_>>()
                .join(", ");
            svg.text(
                x,
                ex_top + 16.0 * (row + 1) as f64,
                10.0,
                "middle",
                "#333",
                &format!("({coords}) r={:.2}", e.responsibility),
            );
        }
    }
    Ok(svg.finish())
}
