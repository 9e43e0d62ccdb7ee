//! Static figures: the potential field as a max-normalized intensity image,
//! obstacle cells in solid per-class colors, and any number of labeled path
//! polylines. SVG is the primary format; PGM P5 is a grayscale fallback for
//! pipelines without an SVG viewer. Output bytes are a pure function of the
//! spec, so identical specs render identically.

use std::fmt::Write as _;

use crate::field::CostField;
use crate::grid::Cell;
use crate::map::SemanticMap;

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("cell_pixels must be at least 1")]
    ZeroCellPixels,
    #[error("cannot render a {width}x{height} image")]
    ZeroSize { width: u32, height: u32 },
    #[error("field is {field_w}x{field_h} but map is {map_w}x{map_h}")]
    DimensionMismatch {
        field_w: u32,
        field_h: u32,
        map_w: u32,
        map_h: u32,
    },
    #[error("path {label:?} vertex {cell} is outside the map")]
    PathOutOfBounds { label: String, cell: Cell },
}

/// One overlay path: legend label, vertex sequence, SVG color.
#[derive(Debug, Clone)]
pub struct PathLayer {
    pub label: String,
    pub path: Vec<Cell>,
    pub color: String,
}

/// Everything one figure needs.
#[derive(Debug, Clone)]
pub struct RenderSpec<'a> {
    pub field: &'a CostField,
    pub map: &'a SemanticMap,
    pub paths: Vec<PathLayer>,
    /// Square pixels per grid cell.
    pub cell_pixels: u32,
}

/// Solid fills for obstacle classes, assigned by class index (cycled).
const CLASS_COLORS: [&str; 8] = [
    "#c23b22", "#2a6f9e", "#3d8c40", "#7d4fa3", "#c77f1f", "#7a5230", "#b5488a", "#2b8a8a",
];

fn validate(spec: &RenderSpec) -> Result<(), RenderError> {
    if spec.cell_pixels == 0 {
        return Err(RenderError::ZeroCellPixels);
    }
    let (w, h) = (spec.map.width(), spec.map.height());
    if w == 0 || h == 0 {
        return Err(RenderError::ZeroSize {
            width: w,
            height: h,
        });
    }
    if spec.field.width() != w || spec.field.height() != h {
        return Err(RenderError::DimensionMismatch {
            field_w: spec.field.width(),
            field_h: spec.field.height(),
            map_w: w,
            map_h: h,
        });
    }
    for layer in &spec.paths {
        for &cell in &layer.path {
            if !spec.map.in_bounds(cell) {
                return Err(RenderError::PathOutOfBounds {
                    label: layer.label.clone(),
                    cell,
                });
            }
        }
    }
    Ok(())
}

/// Largest finite potential in the image; 0 when the field is flat zero.
/// This is the per-image normalization constant, recorded in the output.
fn max_finite_phi(field: &CostField) -> f64 {
    let mut max = 0.0f64;
    for y in 0..field.height() {
        for x in 0..field.width() {
            let phi = field.phi_at(Cell::new(x, y));
            if phi.is_finite() && phi > max {
                max = phi;
            }
        }
    }
    max
}

/// Gray level for one free cell: phi scaled by the image maximum into
/// 0–255. Monotone in phi by construction.
fn intensity(phi: f64, max_phi: f64) -> u8 {
    if max_phi <= 0.0 {
        return 0;
    }
    ((phi / max_phi) * 255.0).round().clamp(0.0, 255.0) as u8
}

fn escape_xml(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn metadata_comment(spec: &RenderSpec, max_phi: f64) -> String {
    let lambdas: Vec<String> = spec
        .field
        .lambda_scaled()
        .iter()
        .map(|(name, lambda)| format!("{name}={lambda}"))
        .collect();
    let config = spec.field.config();
    format!(
        "phi_max={max_phi} gamma={} alpha={} cell_pixels={} lambda_scaled: {}",
        config.gamma,
        config.alpha,
        spec.cell_pixels,
        lambdas.join(", ")
    )
}

/// Renders the overlay figure as an SVG 1.1 document (rect, polyline, text
/// only). The field is drawn cell by cell as grayscale, brighter meaning
/// higher potential; obstacle cells get solid class colors; each path is a
/// polyline through cell centers with a legend entry.
pub fn render_overlay(spec: &RenderSpec) -> Result<String, RenderError> {
    validate(spec)?;
    let cp = spec.cell_pixels;
    let (w, h) = (spec.map.width(), spec.map.height());
    let (px_w, px_h) = (w * cp, h * cp);
    let max_phi = max_finite_phi(spec.field);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{px_w}\" height=\"{px_h}\" viewBox=\"0 0 {px_w} {px_h}\">"
    );
    let _ = writeln!(svg, "<!-- {} -->", escape_xml(&metadata_comment(spec, max_phi)));

    for y in 0..h {
        for x in 0..w {
            let cell = Cell::new(x, y);
            let fill = match spec.map.class_at(cell) {
                Some(class_index) => CLASS_COLORS[class_index % CLASS_COLORS.len()].to_string(),
                None => {
                    let v = intensity(spec.field.phi_at(cell), max_phi);
                    format!("#{v:02x}{v:02x}{v:02x}")
                }
            };
            let _ = writeln!(
                svg,
                "<rect x=\"{}\" y=\"{}\" width=\"{cp}\" height=\"{cp}\" fill=\"{fill}\"/>",
                x * cp,
                y * cp
            );
        }
    }

    for layer in &spec.paths {
        if layer.path.is_empty() {
            continue;
        }
        let points: Vec<String> = layer
            .path
            .iter()
            .map(|cell| {
                let cx = f64::from(cell.x * cp) + f64::from(cp) / 2.0;
                let cy = f64::from(cell.y * cp) + f64::from(cp) / 2.0;
                format!("{cx},{cy}")
            })
            .collect();
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"{}\"/>",
            points.join(" "),
            escape_xml(&layer.color),
            f64::from(cp) / 3.0
        );
    }

    if !spec.paths.is_empty() {
        let longest = spec
            .paths
            .iter()
            .map(|l| l.label.chars().count())
            .max()
            .unwrap_or(0);
        let box_w = 30 + 7 * longest as u32;
        let box_h = 8 + 14 * spec.paths.len() as u32;
        let _ = writeln!(
            svg,
            "<rect x=\"2\" y=\"2\" width=\"{box_w}\" height=\"{box_h}\" fill=\"#ffffff\" fill-opacity=\"0.85\"/>"
        );
        for (i, layer) in spec.paths.iter().enumerate() {
            let row_y = 6 + 14 * i as u32;
            let _ = writeln!(
                svg,
                "<rect x=\"6\" y=\"{row_y}\" width=\"12\" height=\"8\" fill=\"{}\"/>",
                escape_xml(&layer.color)
            );
            let _ = writeln!(
                svg,
                "<text x=\"22\" y=\"{}\" font-family=\"monospace\" font-size=\"10\" fill=\"#000000\">{}</text>",
                row_y + 8,
                escape_xml(&layer.label)
            );
        }
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Renders the field alone as a binary PGM (P5) grayscale dump. Free cells
/// carry the normalized intensity; obstacle cells are forced to full white.
/// The normalization constant and field config ride in the header comment.
pub fn render_field_pgm(spec: &RenderSpec) -> Result<Vec<u8>, RenderError> {
    validate(spec)?;
    let cp = spec.cell_pixels as usize;
    let (w, h) = (spec.map.width(), spec.map.height());
    let (px_w, px_h) = (w as usize * cp, h as usize * cp);
    let max_phi = max_finite_phi(spec.field);

    let mut out = Vec::with_capacity(px_w * px_h + 128);
    out.extend_from_slice(b"P5\n");
    out.extend_from_slice(format!("# {}\n", metadata_comment(spec, max_phi)).as_bytes());
    out.extend_from_slice(format!("{px_w} {px_h}\n255\n").as_bytes());

    let mut row = vec![0u8; px_w];
    for y in 0..h {
        for x in 0..w {
            let cell = Cell::new(x, y);
            let value = if spec.map.is_obstacle(cell) {
                255
            } else {
                intensity(spec.field.phi_at(cell), max_phi)
            };
            row[x as usize * cp..(x as usize + 1) * cp].fill(value);
        }
        for _ in 0..cp {
            out.extend_from_slice(&row);
        }
    }
    Ok(out)
}
