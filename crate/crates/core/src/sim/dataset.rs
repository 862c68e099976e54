//! On-disk capture layout and the binary flow format.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;

use super::{CaptureParams, CaptureTruth, ZoomCapture};
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::imaging::io::{read_png, write_png};
use crate::imaging::{resize_bicubic_to, FlowField, ImagePlane};

pub const FLOW_MAGIC: &[u8; 8] = b"ZSFLOW01";

/// Writes `magic, H, W (u32 LE)`, then the dx plane and the dy plane as f32 LE.
pub fn write_flow(path: &Path, flow: &FlowField) -> Result<()> {
    let (h, w) = flow.dims();
    let mut buf = Vec::with_capacity(16 + 8 * h * w);
    buf.extend_from_slice(FLOW_MAGIC);
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    for v in flow.dx.iter().chain(&flow.dy) {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    if buf.len() < 16 || &buf[..8] != FLOW_MAGIC {
        return Err(Error::Format(format!("{}: missing ZSFLOW01 header", path.display())));
    }
    let h = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes")) as usize;
    let w = u32::from_le_bytes(buf[12..16].try_into().expect("4 bytes")) as usize;
    let expected = 16 + 8 * h * w;
    if buf.len() != expected {
        return Err(Error::Format(format!(
            "{}: {h}x{w} flow needs {expected} bytes, file has {}",
            path.display(),
            buf.len()
        )));
    }
    let vals: Vec<f64> = buf[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let (dx, dy) = vals.split_at(h * w);
    FlowField::new(h, w, dx.to_vec(), dy.to_vec())
}

/// Writes `<dir>/{ultrawide,wide,tele}.png` and, for synthetic captures,
/// `truth/{ultrawide,wide}.flow` plus `truth/params.txt`.
pub fn write_capture(dir: &Path, c: &ZoomCapture) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_png(&c.ultra_wide, dir.join("ultrawide.png"))?;
    write_png(&c.wide, dir.join("wide.png"))?;
    write_png(&c.tele, dir.join("tele.png"))?;
    if let Some(t) = &c.truth {
        let td = dir.join("truth");
        fs::create_dir_all(&td).map_err(|e| Error::io(&td, e))?;
        write_flow(&td.join("ultrawide.flow"), &t.ultra_flow)?;
        write_flow(&td.join("wide.flow"), &t.wide_flow)?;
        let mut kv = t.params.as_ref().map(CaptureParams::to_kv).unwrap_or_default();
        kv.set("r_w", c.r_w.to_string());
        kv.set("r_t", c.r_t.to_string());
        let p = td.join("params.txt");
        fs::write(&p, kv.to_text()).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

fn fit(img: ImagePlane, h: usize, w: usize) -> Result<ImagePlane> {
    if img.dims() == (h, w) {
        Ok(img)
    } else {
        resize_bicubic_to(&img, h, w)
    }
}

/// One capture per scene directory, in name order.
///
/// Wide and tele images are resized to the ultra-wide pixel dimensions, which
/// makes their density ratios exactly `r_w` and `r_t`. Scenes with a missing
/// image are skipped with a warning; unreadable images are errors.
pub fn load_capture_dir(root: &Path, r_w: u32, r_t: u32) -> Result<Vec<ZoomCapture>> {
    let mut dirs: Vec<_> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut out = Vec::new();
    for dir in dirs {
        let id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let names = ["ultrawide.png", "wide.png", "tele.png"];
        if let Some(missing) = names.iter().find(|n| !dir.join(n).is_file()) {
            warn!("skipping scene {id}: {missing} not found");
            continue;
        }
        let ultra = read_png(dir.join("ultrawide.png"))?;
        let (h, w) = ultra.dims();
        let wide = fit(read_png(dir.join("wide.png"))?, h, w)?;
        let tele = fit(read_png(dir.join("tele.png"))?, h, w)?;
        let td = dir.join("truth");
        let truth = if td.join("ultrawide.flow").is_file() && td.join("wide.flow").is_file() {
            let params = if td.join("params.txt").is_file() {
                Some(CaptureParams::from_kv(&KeyValues::load(&td.join("params.txt"))?)?)
            } else {
                None
            };
            Some(CaptureTruth {
                scene: None,
                ultra_flow: read_flow(&td.join("ultrawide.flow"))?,
                wide_flow: read_flow(&td.join("wide.flow"))?,
                params,
            })
        } else {
            None
        };
        out.push(ZoomCapture {
            id,
            ultra_wide: ultra,
            wide,
            tele,
            r_w,
            r_t,
            truth,
        });
    }
    Ok(out)
}
