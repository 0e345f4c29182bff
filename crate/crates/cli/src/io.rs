//! Dataset files and directories.
//!
//! A dataset directory holds `dataset.json` plus the images it names in
//! `file_name`, stored next to it.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use cfu_core::store::{parse_dataset, to_json};
use cfu_core::{Dataset, ExclusionReason, ImageId, ImageRecord, InstanceId};
use image::GrayImage;

use crate::CliError;

pub const DATASET_FILE: &str = "dataset.json";

pub struct Input {
    pub ds: Dataset,
    /// Where relative image file names resolve.
    pub dir: Option<PathBuf>,
}

impl Input {
    pub fn pixel_bytes(&self, img: &ImageRecord) -> Option<Vec<u8>> {
        let path = self.dir.as_ref()?.join(img.pixel_data_ref.as_ref()?);
        fs::read(path).ok()
    }

    /// Decoded pixels, when present and of the recorded size.
    pub fn gray(&self, img: &ImageRecord) -> Option<GrayImage> {
        let g = image::load_from_memory(&self.pixel_bytes(img)?).ok()?.to_luma8();
        (g.dimensions() == (img.width, img.height)).then_some(g)
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    if path == Path::new("-") {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).map_err(|e| CliError::Domain(format!("stdin: {e}")))?;
        return Ok(s);
    }
    fs::read_to_string(path).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))
}

/// Reads a file, a dataset directory, or standard input (`-`).
pub fn read_input(path: &Path) -> Result<Input, CliError> {
    let (file, dir) = if path == Path::new("-") {
        (path.to_path_buf(), None)
    } else if path.is_dir() {
        (path.join(DATASET_FILE), Some(path.to_path_buf()))
    } else {
        (path.to_path_buf(), Some(path.parent().map(Path::to_path_buf).unwrap_or_default()))
    };
    let text = read_text(&file)?;
    let ds = parse_dataset(&text).map_err(|e| CliError::Domain(format!("{}: {e}", file.display())))?;
    Ok(Input { ds, dir })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))
}

/// Writes `ds` to a `.json` file, or to a directory together with the
/// input's images.
pub fn write_dataset(ds: &Dataset, out: &Path, input: &Input) -> Result<(), CliError> {
    if out.extension().is_some_and(|e| e == "json") {
        return write(out, to_json(ds).as_bytes());
    }
    create_dir(out)?;
    write(&out.join(DATASET_FILE), to_json(ds).as_bytes())?;
    for img in &ds.images {
        if let (Some(name), Some(bytes)) = (&img.pixel_data_ref, input.pixel_bytes(img)) {
            let target = out.join(name);
            if input.dir.as_ref().map(|d| d.join(name)) != Some(target.clone()) {
                write(&target, &bytes)?;
            }
        }
    }
    Ok(())
}

pub fn write_synth(
    out: &Path,
    ds: &Dataset,
    images: &[(ImageId, GrayImage)],
    planted: &BTreeMap<InstanceId, ExclusionReason>,
) -> Result<(), CliError> {
    create_dir(out)?;
    write(&out.join(DATASET_FILE), to_json(ds).as_bytes())?;
    for (id, img) in images {
        let rec = ds.image(*id).expect("image recorded");
        let name = rec.pixel_data_ref.clone().unwrap_or_else(|| format!("image_{id}.png"));
        let path = out.join(name);
        img.save(&path).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))?;
    }
    let mut planted = serde_json::to_string_pretty(planted).expect("serializes");
    planted.push('\n');
    write(&out.join("planted.json"), planted.as_bytes())
}
