//! SVG flow-field diagrams.
//!
//! Channels are straight segments between node positions, coloured by
//! |Q| / max|Q| on a linear hue ramp from blue (240°, still) to red (0°,
//! fastest). Output depends only on the inputs, so identical calls give
//! identical bytes.

use std::fmt::Write as _;

use crate::droplet_sim::StreamlinePath;
use crate::network::{FlowSolution, Network, NodeKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub px_per_mm: f64,
    /// Stroke width as a fraction of the drawn channel width.
    pub stroke_ratio: f64,
    pub margin_px: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { px_per_mm: 10.0, stroke_ratio: 0.6, margin_px: 40.0 }
    }
}

/// A droplet path to overlay: the start terminal followed by each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct PathOverlay {
    pub label: String,
    pub start: String,
    pub path: StreamlinePath,
}

/// Fully saturated colour at hue `240·(1 − level)`, as `#rrggbb`.
pub fn flow_color(level: f64) -> String {
    let level = if level.is_finite() { level.clamp(0.0, 1.0) } else { 0.0 };
    let h = 240.0 * (1.0 - level) / 60.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        _ => (0.0, 0.0, 1.0),
    };
    let byte = |v: f64| (v * 255.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", byte(r), byte(g), byte(b))
}

fn num(x: f64) -> String {
    let s = format!("{x:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Node ids visited by an overlay, start terminal first.
pub fn overlay_nodes(net: &Network, overlay: &PathOverlay) -> Option<Vec<usize>> {
    let mut at = net.node_index(&overlay.start)?;
    let mut nodes = vec![at];
    for id in &overlay.path.channels {
        let c = net.channel_index(id)?;
        let (a, b) = net.endpoints(c);
        if a != at && b != at {
            return None;
        }
        at = net.other_end(c, at);
        nodes.push(at);
    }
    Some(nodes)
}

pub fn render_svg(net: &Network, sol: &FlowSolution, overlays: &[PathOverlay], opts: &RenderOptions) -> String {
    let mm = |p: (f64, f64)| (p.0 * 1e3, p.1 * 1e3);
    let pts: Vec<(f64, f64)> = net.nodes().iter().map(|n| mm(n.position)).collect();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if pts.is_empty() {
        (x0, y0, x1, y1) = (0.0, 0.0, 0.0, 0.0);
    }
    let s = opts.px_per_mm;
    let m = opts.margin_px;
    let width = (x1 - x0) * s + 2.0 * m;
    let height = (y1 - y0) * s + 2.0 * m;
    // Layout y points up; SVG y points down.
    let xy = |i: usize| ((pts[i].0 - x0) * s + m, (y1 - pts[i].1) * s + m);

    let max_q = sol.flows().iter().fold(0.0f64, |a, q| a.max(q.abs()));
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = num(width),
        h = num(height)
    )
    .unwrap();
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n");

    out.push_str("<g id=\"channels\" stroke-linecap=\"round\">\n");
    for (c, ch) in net.channels().iter().enumerate() {
        let (a, b) = net.endpoints(c);
        let ((ax, ay), (bx, by)) = (xy(a), xy(b));
        let q = sol.flow(c);
        let level = if max_q > 0.0 { q.abs() / max_q } else { 0.0 };
        writeln!(
            out,
            r#"<line id="{}" x1="{}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="{}"><title>{} Q={:.6e} m3/s</title></line>"#,
            escape(&ch.id),
            num(ax),
            num(ay),
            num(bx),
            num(by),
            flow_color(level),
            num(ch.geometry.width() * 1e3 * s * opts.stroke_ratio),
            escape(&ch.id),
            q
        )
        .unwrap();
    }
    out.push_str("</g>\n");

    out.push_str("<g id=\"paths\" fill=\"none\" stroke=\"#000000\" stroke-width=\"2\" stroke-dasharray=\"6 3\">\n");
    for o in overlays {
        let Some(nodes) = overlay_nodes(net, o) else { continue };
        let points: Vec<String> = nodes
            .iter()
            .map(|&i| {
                let (x, y) = xy(i);
                format!("{},{}", num(x), num(y))
            })
            .collect();
        writeln!(
            out,
            r#"<polyline points="{}"><title>{} to {}</title></polyline>"#,
            points.join(" "),
            escape(&o.label),
            escape(&o.path.terminal)
        )
        .unwrap();
    }
    out.push_str("</g>\n");

    out.push_str("<g id=\"nodes\" font-family=\"sans-serif\" font-size=\"12\">\n");
    for (i, n) in net.nodes().iter().enumerate() {
        let (x, y) = xy(i);
        let r = match n.kind {
            NodeKind::Junction => 4.0,
            NodeKind::Terminal => 3.0,
            NodeKind::Interior => continue,
        };
        writeln!(out, r##"<circle cx="{}" cy="{}" r="{}" fill="#333333"/>"##, num(x), num(y), num(r)).unwrap();
        if n.kind == NodeKind::Terminal {
            writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, num(x + 6.0), num(y - 6.0), escape(&n.id)).unwrap();
        }
    }
    out.push_str("</g>\n</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn color_ramp_endpoints() {
        assert_eq!(flow_color(0.0), "#0000ff");
        assert_eq!(flow_color(1.0), "#ff0000");
        assert_eq!(flow_color(0.5), "#00ff00");
        assert_eq!(flow_color(0.25), "#00ffff");
        assert_eq!(flow_color(f64::NAN), "#0000ff");
    }

    #[test]
    fn compact_numbers() {
        assert_eq!(num(12.0), "12");
        assert_eq!(num(12.345), "12.35");
        assert_eq!(num(-0.001), "0");
        assert_eq!(num(0.5), "0.5");
    }
}
