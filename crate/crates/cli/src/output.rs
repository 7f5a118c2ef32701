//! Artifact writers. Every artifact carries the config fingerprint: CSVs in
//! a leading `# fingerprint=` comment, JSON in an `info`/`fingerprint`
//! field, PNGs in a `tEXt` chunk and SVGs in a comment.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};
use denseprompt::bench::BenchRow;
use denseprompt::geometry::{rle_decode, BoxXYXY};
use denseprompt::image::RgbImage;
use denseprompt::pipeline::Detection;
use denseprompt::rng::hash_words;
use plotters::prelude::*;

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn write_csv(path: &Path, fingerprint: &str, body: &str) -> Result<()> {
    write_text(path, &format!("# fingerprint={fingerprint}\n{body}"))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

pub fn write_png(path: &Path, img: &RgbImage, fingerprint: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut enc = png::Encoder::new(
        BufWriter::new(file),
        img.width() as u32,
        img.height() as u32,
    );
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.add_text_chunk("fingerprint".into(), fingerprint.into())?;
    let mut w = enc.write_header()?;
    w.write_image_data(img.as_raw())?;
    w.finish()?;
    Ok(())
}

fn palette(i: usize) -> [u8; 3] {
    let h = hash_words(&[i as u64, 0x0C01]);
    // bright, saturated colours
    [
        (h & 0xff) as u8 | 0x40,
        ((h >> 8) & 0xff) as u8 | 0x40,
        ((h >> 16) & 0xff) as u8 | 0x40,
    ]
}

/// Masks blended at half opacity with one-pixel box outlines.
pub fn overlay(image: &RgbImage, dets: &[Detection]) -> Result<RgbImage> {
    let mut out = image.clone();
    for (i, d) in dets.iter().enumerate() {
        let c = palette(i);
        let m = rle_decode(&d.mask)?;
        for y in 0..m.height().min(out.height()) {
            for x in 0..m.width().min(out.width()) {
                if m.get(x, y) {
                    let p = out.pixel(x, y);
                    out.put_pixel(
                        x,
                        y,
                        std::array::from_fn(|k| ((p[k] as u16 + c[k] as u16) / 2) as u8),
                    );
                }
            }
        }
        outline(&mut out, &d.bbox, c);
    }
    Ok(out)
}

fn outline(img: &mut RgbImage, b: &BoxXYXY, c: [u8; 3]) {
    let (w, h) = (img.width(), img.height());
    if w == 0 || h == 0 {
        return;
    }
    let clampi = |v: f64, hi: usize| (v.max(0.0) as usize).min(hi - 1);
    let (x1, y1) = (clampi(b.x1, w), clampi(b.y1, h));
    let (x2, y2) = (clampi(b.x2 - 1.0, w), clampi(b.y2 - 1.0, h));
    for x in x1..=x2 {
        img.put_pixel(x, y1, c);
        img.put_pixel(x, y2, c);
    }
    for y in y1..=y2 {
        img.put_pixel(x1, y, c);
        img.put_pixel(x2, y, c);
    }
}

const SERIES: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

/// A named polyline over grid sides.
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Groups rows by sampler and budget into series of `value` against grid.
pub fn series_by_sampler(rows: &[BenchRow], value: impl Fn(&BenchRow) -> f64) -> Vec<Series> {
    let mut out: Vec<Series> = Vec::new();
    for r in rows.iter().filter(|r| r.grid > 0) {
        let name = match r.budget {
            Some(k) => format!("{} K={k}", r.sampler),
            None => r.sampler.clone(),
        };
        let p = (r.grid as f64, value(r));
        match out.iter_mut().find(|s| s.name == name) {
            Some(s) => s.points.push(p),
            None => out.push(Series {
                name,
                points: vec![p],
            }),
        }
    }
    out
}

/// Line chart with a log-scale grid axis, as SVG text.
pub fn line_chart(
    title: &str,
    y_label: &str,
    series: &[Series],
    log_y: bool,
    fingerprint: &str,
) -> Result<String> {
    let pts = || series.iter().flat_map(|s| s.points.iter());
    let x_lo = pts().map(|p| p.0).fold(f64::INFINITY, f64::min).max(1.0);
    let x_hi = pts().map(|p| p.0).fold(1.0, f64::max);
    let y_hi = pts().map(|p| p.1).fold(0.0, f64::max);
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (640, 420)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut cb = ChartBuilder::on(&root);
        cb.caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(60);
        let x_range = (x_lo / 1.2..x_hi * 1.2).log_scale();
        if log_y {
            let y_lo = pts()
                .map(|p| p.1)
                .filter(|v| *v > 0.0)
                .fold(f64::INFINITY, f64::min)
                .min(y_hi)
                .max(1e-3);
            let mut chart = cb
                .build_cartesian_2d(x_range, (y_lo / 1.5..y_hi.max(y_lo) * 1.5).log_scale())
                .map_err(plot_err)?;
            chart
                .configure_mesh()
                .x_desc("grid side")
                .y_desc(y_label)
                .draw()
                .map_err(plot_err)?;
            draw_series(&mut chart, series)?;
        } else {
            let mut chart = cb
                .build_cartesian_2d(x_range, 0.0..(y_hi * 1.05).max(1e-9))
                .map_err(plot_err)?;
            chart
                .configure_mesh()
                .x_desc("grid side")
                .y_desc(y_label)
                .draw()
                .map_err(plot_err)?;
            draw_series(&mut chart, series)?;
        }
        root.present().map_err(plot_err)?;
    }
    Ok(insert_comment(&svg, fingerprint))
}

fn draw_series<'a, X, Y>(
    chart: &mut ChartContext<'a, SVGBackend<'a>, Cartesian2d<X, Y>>,
    series: &[Series],
) -> Result<()>
where
    X: plotters::coord::ranged1d::Ranged<ValueType = f64>,
    Y: plotters::coord::ranged1d::Ranged<ValueType = f64>,
{
    for (i, s) in series.iter().enumerate() {
        let c = SERIES[i % SERIES.len()];
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), c.stroke_width(2)))
            .map_err(plot_err)?
            .label(s.name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], c.stroke_width(2)));
        chart
            .draw_series(s.points.iter().map(|&p| Circle::new(p, 3, c.filled())))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    Ok(())
}

fn plot_err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow::anyhow!("plot rendering failed: {e:?}")
}

fn insert_comment(svg: &str, fingerprint: &str) -> String {
    match svg.find('>') {
        Some(i) => format!(
            "{}\n<!-- fingerprint={fingerprint} -->{}",
            &svg[..=i],
            &svg[i + 1..]
        ),
        None => svg.to_string(),
    }
}
