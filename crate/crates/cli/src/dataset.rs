//! On-disk dataset layout.
//!
//! A dataset directory holds `manifest.json` plus the files it points to:
//! portable event streams under `streams/`, and for train entries a binary
//! PGM frame under `frames/` with the same stem. Everything written here is
//! a pure function of its inputs, so regenerating a dataset reproduces the
//! directory byte for byte.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use evdance_core::adapt::{AdaptDataset, NamedStream};
use evdance_core::autodiff::Tensor;
use evdance_core::event_io::{
    parse_portable_events, write_portable_events, DatasetManifest, ManifestEntry, Split,
    SynthDataset,
};

use crate::log;

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn write_synth_dataset(ds: &SynthDataset, dir: &Path) -> Result<()> {
    let streams_dir = dir.join("streams");
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&streams_dir)
        .with_context(|| format!("creating {}", streams_dir.display()))?;
    fs::create_dir_all(&frames_dir)
        .with_context(|| format!("creating {}", frames_dir.display()))?;

    let mut entries = Vec::new();
    for item in &ds.items {
        let stem = item.stem();
        let rel = format!("streams/{stem}.events");
        fs::write(dir.join(&rel), write_portable_events(&item.stream))
            .with_context(|| format!("writing {rel}"))?;
        if item.split == Split::Train {
            write_pgm(&frames_dir.join(format!("{stem}.pgm")), ds.width, ds.height, &item.frame)?;
        }
        entries.push(ManifestEntry { path: rel, label: Some(item.class), split: item.split });
    }
    let manifest = DatasetManifest {
        width: ds.width,
        height: ds.height,
        classes: ds.classes.clone(),
        entries,
    };
    fs::write(dir.join(MANIFEST_NAME), manifest.to_json() + "\n")
        .with_context(|| format!("writing {}", dir.join(MANIFEST_NAME).display()))?;
    Ok(())
}

pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub data: AdaptDataset,
}

pub fn load_dataset(dir: &Path) -> Result<LoadedDataset> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&manifest_path)
        .with_context(|| format!("reading {}", manifest_path.display()))?;
    let manifest = DatasetManifest::from_json(&text)
        .with_context(|| format!("parsing {}", manifest_path.display()))?;

    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut warning_count = 0usize;
    for entry in &manifest.entries {
        let path = dir.join(&entry.path);
        let text =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let (mut stream, warnings) = parse_portable_events(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
        warning_count += warnings.len();
        if stream.width != manifest.width || stream.height != manifest.height {
            bail!(
                "{}: sensor {}x{} does not match manifest {}x{}",
                entry.path,
                stream.width,
                stream.height,
                manifest.width,
                manifest.height
            );
        }
        if let (Some(a), Some(b)) = (stream.label, entry.label) {
            if a != b {
                bail!("{}: stream label {a} disagrees with manifest label {b}", entry.path);
            }
        }
        if entry.label.is_some() {
            stream.label = entry.label;
        }
        let named = NamedStream { id: stem_of(&entry.path), stream };
        match entry.split {
            Split::Train => train.push(named),
            Split::Test => test.push(named),
        }
    }
    if warning_count > 0 {
        log::info(format!("{warning_count} timestamp-order warnings while loading streams"));
    }
    Ok(LoadedDataset {
        data: AdaptDataset {
            width: manifest.width,
            height: manifest.height,
            classes: manifest.classes.clone(),
            train,
            test,
        },
        manifest,
    })
}

/// Train-split frames and labels, in manifest order.
pub fn load_source_frames(dir: &Path, manifest: &DatasetManifest) -> Result<(Tensor, Vec<usize>)> {
    let dim = manifest.width as usize * manifest.height as usize;
    let mut flat = Vec::new();
    let mut labels = Vec::new();
    for entry in manifest.entries.iter().filter(|e| e.split == Split::Train) {
        let Some(label) = entry.label else {
            bail!("{}: train entry has no label", entry.path);
        };
        let path = dir.join("frames").join(format!("{}.pgm", stem_of(&entry.path)));
        let (w, h, gray) = read_pgm(&path)?;
        if (w, h) != (manifest.width, manifest.height) {
            bail!(
                "{}: frame {w}x{h} does not match manifest {}x{}",
                path.display(),
                manifest.width,
                manifest.height
            );
        }
        flat.extend(gray);
        labels.push(label);
    }
    if labels.is_empty() {
        bail!("dataset has no train frames");
    }
    let n = labels.len();
    Ok((Tensor::from_vec(&[n, dim], flat), labels))
}

fn stem_of(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string())
}

/// Binary PGM (P5, maxval 255); gray values in [0, 1] scale to bytes.
pub fn write_pgm(path: &Path, width: u16, height: u16, gray: &[f64]) -> Result<()> {
    let pixels = width as usize * height as usize;
    if gray.len() != pixels {
        bail!("frame has {} values for {width}x{height}", gray.len());
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(gray.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<(u16, u16, Vec<f64>)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_pgm(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn parse_pgm(bytes: &[u8]) -> Result<(u16, u16, Vec<f64>)> {
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        // Skip whitespace and `#` comment lines between header tokens.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            bail!("truncated header");
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(bytes)? != "P5" {
        bail!("not a binary PGM");
    }
    let width: u16 = token(bytes)?.parse().context("width")?;
    let height: u16 = token(bytes)?.parse().context("height")?;
    let maxval: u32 = token(bytes)?.parse().context("maxval")?;
    if maxval != 255 {
        bail!("unsupported maxval {maxval}");
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let pixels = width as usize * height as usize;
    if bytes.len() < pos || bytes.len() - pos != pixels {
        bail!("raster has {} bytes, expected {pixels}", bytes.len().saturating_sub(pos));
    }
    Ok((width, height, bytes[pos..].iter().map(|&b| b as f64 / 255.0).collect()))
}
