//! File helpers shared by the pipeline stages: atomic writes, binary PPM and
//! JSON documents.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, RigidTransform};
use crate::radiance::{ImageBuffer, RenderConfig, SceneBounds, TrainingView};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

impl IoError {
    fn file(path: &Path, source: std::io::Error) -> Self {
        IoError::File {
            path: path.display().to_string(),
            source,
        }
    }

    fn format(path: &Path, message: impl Into<String>) -> Self {
        IoError::Format {
            path: path.display().to_string(),
            message: message.into(),
        }
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = dir.join(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::format(path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::format(path, e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(|e| IoError::file(path, e))
}

/// Encodes a binary PPM (P6, maxval 255). Channels are clamped to `[0, 1]`
/// and rounded to the nearest level.
pub fn encode_ppm(image: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(
        image
            .pixels
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<ImageBuffer, String> {
    let mut pos = 0;
    let mut next_token = || -> Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if next_token()? != "P6" {
        return Err("only binary P6 images are supported".into());
    }
    let mut number = |what: &str| -> Result<usize, String> {
        next_token()?
            .parse::<usize>()
            .map_err(|_| format!("bad {what}"))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(format!("maxval must be 255, got {maxval}"));
    }
    if width == 0 || height == 0 {
        return Err("empty image".into());
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let len = width * height * 3;
    let raster = bytes
        .get(start..start + len)
        .ok_or_else(|| "truncated raster".to_string())?;
    let pixels = raster.iter().map(|&b| b as f64 / 255.0).collect();
    ImageBuffer::new(width, height, pixels).map_err(|e| e.to_string())
}

pub fn write_ppm(path: &Path, image: &ImageBuffer) -> Result<(), IoError> {
    write_atomic(path, &encode_ppm(image)).map_err(|e| IoError::file(path, e))
}

pub fn read_ppm(path: &Path) -> Result<ImageBuffer, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::file(path, e))?;
    decode_ppm(&bytes).map_err(|m| IoError::format(path, m))
}

/// Intrinsics given inline or as a path relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IntrinsicsRef {
    Inline(CameraIntrinsics),
    File(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFrame {
    /// PPM path relative to the manifest.
    pub image: String,
    #[serde(rename = "transform_cam_to_world")]
    pub cam_to_world: RigidTransform,
}

/// Posed-image dataset. `bounds` and `render` record the scene box and
/// sampling interval the images were made with, when known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub intrinsics: IntrinsicsRef,
    pub frames: Vec<ManifestFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<SceneBounds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub render: Option<RenderConfig>,
}

/// Writes `views` as `{stem}_NNN.ppm`, `{stem}_intrinsics.json` and the
/// manifest `{stem}.json` in `dir`; returns the manifest path. All views
/// must share one camera.
pub fn write_training_set(
    dir: &Path,
    stem: &str,
    views: &[TrainingView],
    bounds: Option<SceneBounds>,
    render: Option<RenderConfig>,
) -> Result<PathBuf, IoError> {
    let path = dir.join(format!("{stem}.json"));
    let k = match views.first() {
        Some(v) => v.intrinsics,
        None => return Err(IoError::format(&path, "no views to write")),
    };
    if views.iter().any(|v| v.intrinsics != k) {
        return Err(IoError::format(&path, "views do not share intrinsics"));
    }
    fs::create_dir_all(dir).map_err(|e| IoError::file(dir, e))?;
    let intrinsics_name = format!("{stem}_intrinsics.json");
    write_json(&dir.join(&intrinsics_name), &k)?;
    let mut frames = Vec::with_capacity(views.len());
    for (i, view) in views.iter().enumerate() {
        let name = format!("{stem}_{i:03}.ppm");
        write_ppm(&dir.join(&name), &view.image)?;
        frames.push(ManifestFrame {
            image: name,
            cam_to_world: view.cam_to_world,
        });
    }
    write_json(
        &path,
        &TrainingManifest {
            intrinsics: IntrinsicsRef::File(intrinsics_name),
            frames,
            bounds,
            render,
        },
    )?;
    Ok(path)
}

pub fn read_training_set(path: &Path) -> Result<(TrainingManifest, Vec<TrainingView>), IoError> {
    let manifest: TrainingManifest = read_json(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let k = match &manifest.intrinsics {
        IntrinsicsRef::Inline(k) => *k,
        IntrinsicsRef::File(f) => read_json(&dir.join(f))?,
    };
    let views = manifest
        .frames
        .iter()
        .map(|f| {
            let image = read_ppm(&dir.join(&f.image))?;
            if image.width != k.width as usize || image.height != k.height as usize {
                return Err(IoError::format(path, format!("{} does not match the intrinsics", f.image)));
            }
            Ok(TrainingView {
                image,
                intrinsics: k,
                cam_to_world: f.cam_to_world,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok((manifest, views))
}
