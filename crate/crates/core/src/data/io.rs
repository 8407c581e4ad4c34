//! PNG frame directories and the dataset layout
//! `root/<scene>/<level>/frame_%06d.png` with `train.txt` / `test.txt`
//! manifests listing scene ids, one per line.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::Clip;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Light-level directory names, in percent.
pub const LEVEL_DIRS: [&str; 3] = ["100", "20", "10"];

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:06}.png")
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a `(3, H, W)` image in `[0, 1]` as 8-bit RGB PNG.
pub fn save_image(path: &Path, img: &Tensor<f32>) -> Result<()> {
    let [3, h, w] = *img.shape() else {
        return Err(Error::Data(format!("expected (3, H, W), got {:?}", img.shape())));
    };
    let d = img.data();
    let n = h * w;
    let buf = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([to_u8(d[i]), to_u8(d[n + i]), to_u8(d[2 * n + i])])
    });
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let n = h * w;
    let mut data = vec![0.0f32; 3 * n];
    for (x, y, px) in img.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * n + i] = px.0[c] as f32 / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data)
}

pub fn save_frames(clip: &Clip, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in clip.frames.iter().enumerate() {
        save_image(&dir.join(frame_name(i)), f)?;
    }
    Ok(())
}

/// Sorted frame indices found in `dir`.
fn frame_indices(dir: &Path) -> Result<Vec<usize>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut idx = Vec::new();
    for entry in entries {
        let name = entry.map_err(|e| Error::io(dir, e))?.file_name();
        let name = name.to_string_lossy();
        if let Some(num) = name.strip_prefix("frame_").and_then(|s| s.strip_suffix(".png")) {
            if num.len() == 6 && num.bytes().all(|b| b.is_ascii_digit()) {
                idx.push(num.parse().expect("six digits"));
            }
        }
    }
    idx.sort_unstable();
    Ok(idx)
}

/// Loads `frame_000000.png ..` from `dir`. The numbering must start at 0
/// and have no gaps.
pub fn load_frames(dir: &Path) -> Result<Clip> {
    let idx = frame_indices(dir)?;
    if idx.is_empty() {
        return Err(Error::Data(format!("{}: no frame_%06d.png files", dir.display())));
    }
    if let Some(gap) = idx.iter().enumerate().find(|(k, &i)| *k != i).map(|(k, _)| k) {
        return Err(Error::Data(format!(
            "{}: frame numbering has a gap, {} is missing",
            dir.display(),
            frame_name(gap)
        )));
    }
    let frames = idx
        .iter()
        .map(|&i| load_image(&dir.join(frame_name(i))))
        .collect::<Result<Vec<_>>>()?;
    let id = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Clip::new(frames, 1.0, id)
}

fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

/// A dataset root with its train/test split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl Dataset {
    /// Reads the manifests and checks that every listed scene directory
    /// exists.
    pub fn open(root: &Path) -> Result<Self> {
        let train = read_manifest(&root.join("train.txt"))?;
        let test = read_manifest(&root.join("test.txt"))?;
        for s in train.iter().chain(&test) {
            if !root.join(s).is_dir() {
                return Err(Error::Data(format!("scene `{s}` listed but {} is missing", root.join(s).display())));
            }
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            train,
            test,
        })
    }

    pub fn write_manifests(root: &Path, train: &[String], test: &[String]) -> Result<()> {
        for (name, ids) in [("train.txt", train), ("test.txt", test)] {
            let mut text = ids.join("\n");
            text.push('\n');
            let p = root.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    pub fn clip_dir(&self, scene: &str, level: &str) -> PathBuf {
        self.root.join(scene).join(level)
    }

    /// Loads one scene at one level (a directory name such as `"10"`).
    pub fn load(&self, scene: &str, level: &str) -> Result<Clip> {
        let pct: f64 = level
            .parse()
            .map_err(|_| Error::Data(format!("light level directory `{level}` is not a percentage")))?;
        let mut clip = load_frames(&self.clip_dir(scene, level))?;
        clip.light_level = pct / 100.0;
        clip.scene_id = scene.to_string();
        Ok(clip)
    }

    /// Checks that each listed scene has every requested level with the
    /// same frame count and size.
    pub fn validate(&self, levels: &[&str]) -> Result<()> {
        for s in self.train.iter().chain(&self.test) {
            let mut expect = None;
            for l in levels {
                let dir = self.clip_dir(s, l);
                let idx = frame_indices(&dir)?;
                let first = dir.join(frame_name(0));
                let dims = image::image_dimensions(&first).map_err(|e| Error::Image { path: first.clone(), source: e })?;
                match expect {
                    None => expect = Some((idx.len(), dims)),
                    Some(e) if e != (idx.len(), dims) => {
                        return Err(Error::Data(format!("scene `{s}`: level {l} differs in frame count or size")));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_scene, Motion};

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let clip = synth_scene(1, 3, 16, Motion::Mixed).unwrap();
        save_frames(&clip, dir.path()).unwrap();
        let back = load_frames(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in back.frames.iter().zip(&clip.frames) {
            assert!(a.max_abs_diff(b) <= 1.0 / 255.0);
        }
    }

    #[test]
    fn empty_and_gapped_directories() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_frames(dir.path()).is_err());
        let f = Tensor::full(&[3, 2, 2], 0.5);
        for i in [0, 1, 3] {
            save_image(&dir.path().join(frame_name(i)), &f).unwrap();
        }
        let e = load_frames(dir.path()).unwrap_err().to_string();
        assert!(e.contains("frame_000002.png"), "{e}");
    }

    #[test]
    fn dataset_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let clip = synth_scene(1, 2, 8, Motion::Mixed).unwrap();
        for s in ["a", "b"] {
            save_frames(&clip, &dir.path().join(s).join("100")).unwrap();
        }
        Dataset::write_manifests(dir.path(), &["a".into()], &["b".into()]).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.train, vec!["a"]);
        ds.validate(&["100"]).unwrap();
        assert!(ds.validate(&["100", "10"]).is_err());
        assert_eq!(ds.load("a", "100").unwrap().light_level, 1.0);
        Dataset::write_manifests(dir.path(), &["a".into(), "c".into()], &[]).unwrap();
        assert!(Dataset::open(dir.path()).is_err());
    }
}
