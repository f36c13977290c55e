use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::Dataset;
use crate::augment::SampleShape;
use crate::error::{Error, Result};
use crate::numcore::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DataFormat {
    /// Header row; a final column named `label` holds integer classes.
    Csv,
    /// Little-endian f32 payload with a `<file>.manifest` sidecar.
    Binary,
    /// Directory of binary PGM (P5) / PPM (P6) images, one subdirectory per class.
    Pnm,
}

impl DataFormat {
    /// Directories are image folders, `.csv` files are CSV, anything else is binary.
    pub fn infer(path: &Path) -> Self {
        if path.is_dir() {
            DataFormat::Pnm
        } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            DataFormat::Csv
        } else {
            DataFormat::Binary
        }
    }
}

impl fmt::Display for DataFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataFormat::Csv => "csv",
            DataFormat::Binary => "binary",
            DataFormat::Pnm => "pnm",
        })
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "binary" | "bin" => Ok(DataFormat::Binary),
            "pnm" | "pgm" | "ppm" => Ok(DataFormat::Pnm),
            _ => Err(Error::argument(format!("unknown data format {s:?} (expected csv, binary or pnm)"))),
        }
    }
}

pub fn load_dataset(path: &Path, format: DataFormat) -> Result<Dataset> {
    match format {
        DataFormat::Csv => {
            let text = fs::read_to_string(path)?;
            parse_csv(&text, &path.display().to_string())
        }
        DataFormat::Binary => load_binary(path),
        DataFormat::Pnm => load_pnm_dir(path),
    }
}

fn parse_csv(text: &str, source: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(source, "line 1", "missing header row"))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let labelled = names.last().is_some_and(|n| n.eq_ignore_ascii_case("label"));
    let features = names.len() - usize::from(labelled);
    if features == 0 {
        return Err(Error::parse(source, "line 1", "no feature columns"));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for (idx, line) in lines {
        let at = format!("line {}", idx + 1);
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != names.len() {
            return Err(Error::parse(source, at, format!("expected {} fields, found {}", names.len(), fields.len())));
        }
        for (col, f) in fields[..features].iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::parse(source, format!("{at}, column {}", col + 1), format!("not a number: {f:?}")))?;
            if !v.is_finite() {
                return Err(Error::parse(source, format!("{at}, column {}", col + 1), "non-finite value"));
            }
            data.push(v);
        }
        if labelled {
            let f = fields[features];
            labels.push(
                f.parse::<usize>()
                    .map_err(|_| Error::parse(source, &at, format!("label must be a non-negative integer, got {f:?}")))?,
            );
        }
        rows += 1;
    }
    let samples = DenseMatrix::new(rows, features, data)?;
    Dataset::vectors(samples, labelled.then_some(labels))
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

struct Manifest {
    rows: usize,
    shape: SampleShape,
    labels: bool,
}

fn parse_manifest(text: &str, path: &Path) -> Result<Manifest> {
    let bad = |m: String| Error::Manifest {
        path: path.to_path_buf(),
        message: m,
    };
    let (mut dtype, mut shape, mut labels) = (None, None, None);
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("expected key=value, got {line:?}")))?;
        match k.trim() {
            "dtype" => dtype = Some(v.trim().to_string()),
            "shape" => {
                let dims: Vec<usize> = v
                    .split(',')
                    .map(|d| d.trim().parse::<usize>().map_err(|_| bad(format!("bad shape {v:?}"))))
                    .collect::<Result<_>>()?;
                shape = Some(dims);
            }
            "labels" => {
                labels = Some(match v.trim() {
                    "true" | "yes" | "1" => true,
                    "false" | "no" | "0" => false,
                    other => return Err(bad(format!("labels must be true or false, got {other:?}"))),
                })
            }
            other => return Err(bad(format!("unknown key {other:?}"))),
        }
    }
    match dtype.as_deref() {
        Some("f32le") => {}
        Some(other) => return Err(bad(format!("unsupported dtype {other:?}, expected f32le"))),
        None => return Err(bad("missing dtype".into())),
    }
    let dims = shape.ok_or_else(|| bad("missing shape".into()))?;
    let sample = match dims[1..] {
        [d] => SampleShape::Vector(d),
        [height, width, channels] => SampleShape::Raster {
            height,
            width,
            channels,
        },
        _ => return Err(bad(format!("shape must be N,D or N,H,W,C, got {dims:?}"))),
    };
    Ok(Manifest {
        rows: dims[0],
        shape: sample,
        labels: labels.ok_or_else(|| bad("missing labels".into()))?,
    })
}

fn load_binary(path: &Path) -> Result<Dataset> {
    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::Manifest {
        path: mpath.clone(),
        message: e.to_string(),
    })?;
    let m = parse_manifest(&text, &mpath)?;
    let bytes = fs::read(path)?;
    let values = m.rows * m.shape.len();
    let expected = 4 * values + if m.labels { 4 * m.rows } else { 0 };
    if bytes.len() != expected {
        return Err(Error::parse(
            path.display().to_string(),
            format!("byte {}", bytes.len().min(expected)),
            format!("manifest declares {expected} bytes, file has {}", bytes.len()),
        ));
    }
    let word = |i: usize| [bytes[4 * i], bytes[4 * i + 1], bytes[4 * i + 2], bytes[4 * i + 3]];
    let data: Vec<f64> = (0..values).map(|i| f32::from_le_bytes(word(i)) as f64).collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::parse(path.display().to_string(), format!("byte {}", 4 * i), "non-finite value"));
    }
    let labels = m
        .labels
        .then(|| (0..m.rows).map(|i| u32::from_le_bytes(word(values + i)) as usize).collect());
    Dataset::new(DenseMatrix::new(m.rows, m.shape.len(), data)?, labels, m.shape)
}

/// Writes the binary format. Values are stored as f32, so the round trip is
/// exact for f32-representable data.
pub fn save_binary(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(4 * (dataset.samples().len() + dataset.len()));
    for &v in dataset.samples().as_slice() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    if let Some(labels) = dataset.labels() {
        for &l in labels {
            let l = u32::try_from(l).map_err(|_| Error::argument(format!("label {l} does not fit in u32")))?;
            bytes.extend_from_slice(&l.to_le_bytes());
        }
    }
    let dims = match dataset.shape() {
        SampleShape::Vector(d) => format!("{},{d}", dataset.len()),
        SampleShape::Raster {
            height,
            width,
            channels,
        } => format!("{},{height},{width},{channels}", dataset.len()),
    };
    let manifest = format!("dtype=f32le\nshape={dims}\nlabels={}\n", dataset.labels().is_some());
    fs::write(path, bytes)?;
    fs::write(manifest_path(path), manifest)?;
    Ok(())
}

/// Decoded image: (height, width, channels, values in [0, 1]).
type Image = (usize, usize, usize, Vec<f64>);

fn parse_pnm(bytes: &[u8], source: &str) -> Result<Image> {
    let err = |offset: usize, msg: &str| Error::parse(source, format!("byte {offset}"), msg);
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(err(0, "expected P5 or P6 magic")),
    };
    let mut pos = 2;
    let mut header = [0usize; 3];
    for field in &mut header {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(start, "expected a decimal header field"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(err(pos, "expected whitespace after maxval"));
    }
    pos += 1;
    let [width, height, maxval] = header;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(err(pos, "invalid dimensions or maxval"));
    }
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let count = width * height * channels;
    let body = &bytes[pos..];
    if body.len() < count * sample_bytes {
        return Err(err(bytes.len(), "truncated pixel data"));
    }
    let values = (0..count)
        .map(|i| {
            let raw = if sample_bytes == 1 {
                body[i] as usize
            } else {
                (body[2 * i] as usize) << 8 | body[2 * i + 1] as usize
            };
            (raw.min(maxval)) as f64 / maxval as f64
        })
        .collect();
    Ok((height, width, channels, values))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    Ok(entries)
}

fn is_image(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "pnm"))
}

/// Subdirectories (sorted by name) are classes; images directly inside the
/// root are loaded without labels.
fn load_pnm_dir(root: &Path) -> Result<Dataset> {
    let entries = sorted_entries(root)?;
    let class_dirs: Vec<&PathBuf> = entries.iter().filter(|p| p.is_dir()).collect();
    let mut files: Vec<(PathBuf, Option<usize>)> = Vec::new();
    if class_dirs.is_empty() {
        files.extend(entries.iter().filter(|p| is_image(p)).map(|p| (p.clone(), None)));
    } else {
        for (class, dir) in class_dirs.iter().enumerate() {
            for p in sorted_entries(dir)?.into_iter().filter(|p| is_image(p)) {
                files.push((p, Some(class)));
            }
        }
    }
    if files.is_empty() {
        return Err(Error::parse(root.display().to_string(), "directory", "no PGM/PPM images found"));
    }
    let mut shape = None;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (path, label) in &files {
        let source = path.display().to_string();
        let (h, w, c, values) = parse_pnm(&fs::read(path)?, &source)?;
        let this = SampleShape::Raster {
            height: h,
            width: w,
            channels: c,
        };
        match shape {
            None => shape = Some(this),
            Some(s) if s != this => {
                return Err(Error::parse(source, "header", format!("image is {this:?}, expected {s:?}")));
            }
            _ => {}
        }
        data.extend(values);
        labels.extend(*label);
    }
    let shape = shape.expect("at least one image");
    let samples = DenseMatrix::new(files.len(), shape.len(), data)?;
    let labels = (labels.len() == files.len()).then_some(labels);
    Dataset::new(samples, labels, shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_with_labels() {
        let d = parse_csv("a,b,label\n0,1,0\n1,0,1", "t").unwrap();
        assert_eq!(d.samples(), &DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap());
        assert_eq!(d.labels(), Some(&[0, 1][..]));
        let u = parse_csv("a,b\n0.5,2\n", "t").unwrap();
        assert!(u.labels().is_none());
    }

    #[test]
    fn csv_errors_carry_locations() {
        let e = parse_csv("a,b\n1,2\n3\n", "t").unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
        let e = parse_csv("a,b\n1,x\n", "t").unwrap_err().to_string();
        assert!(e.contains("column 2"), "{e}");
        assert!(parse_csv("a,label\n1,-1\n", "t").is_err());
        assert!(parse_csv("", "t").is_err());
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.bin");
        let d = Dataset::vectors(
            DenseMatrix::from_rows(&[[0.5, -1.25, 3.0], [1e-3f32 as f64, 7.0, 0.0]]).unwrap(),
            Some(vec![1, 0]),
        )
        .unwrap();
        save_binary(&d, &path).unwrap();
        assert_eq!(load_dataset(&path, DataFormat::Binary).unwrap(), d);

        let raster = Dataset::new(DenseMatrix::filled(2, 12, 0.25), None, SampleShape::Raster { height: 2, width: 2, channels: 3 }).unwrap();
        save_binary(&raster, &path).unwrap();
        assert_eq!(load_dataset(&path, DataFormat::Binary).unwrap(), raster);
    }

    #[test]
    fn binary_size_and_manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.bin");
        fs::write(&path, [0u8; 8]).unwrap();
        assert!(matches!(load_dataset(&path, DataFormat::Binary), Err(Error::Manifest { .. })));
        fs::write(manifest_path(&path), "dtype=f32le\nshape=3,1\nlabels=false\n").unwrap();
        assert!(matches!(load_dataset(&path, DataFormat::Binary), Err(Error::Parse { .. })));
        fs::write(manifest_path(&path), "dtype=f64le\nshape=1,1\nlabels=false\n").unwrap();
        assert!(matches!(load_dataset(&path, DataFormat::Binary), Err(Error::Manifest { .. })));
        fs::write(manifest_path(&path), "dtype=f32le\nshape=2,1\nlabels=false\n").unwrap();
        assert_eq!(load_dataset(&path, DataFormat::Binary).unwrap().len(), 2);
    }

    fn pgm(w: usize, h: usize, pixels: &[u8]) -> Vec<u8> {
        let mut b = format!("P5\n# comment\n{w} {h}\n255\n").into_bytes();
        b.extend_from_slice(pixels);
        b
    }

    #[test]
    fn pgm_scaling_follows_maxval() {
        let (h, w, c, v) = parse_pnm(&pgm(2, 1, &[255, 51]), "t").unwrap();
        assert_eq!((h, w, c), (1, 2, 1));
        assert_eq!(v, vec![1.0, 0.2]);
        let mut ppm = b"P6 1 1 65535\n".to_vec();
        ppm.extend_from_slice(&[0xff, 0xff, 0, 0, 0x80, 0]);
        let (_, _, c, v) = parse_pnm(&ppm, "t").unwrap();
        assert_eq!(c, 3);
        assert_eq!(v[0], 1.0);
        assert_eq!(v[2], 32768.0 / 65535.0);
        assert!(parse_pnm(b"P2 1 1 255\n0", "t").is_err());
        assert!(parse_pnm(&pgm(2, 2, &[1]), "t").is_err());
    }

    #[test]
    fn pnm_directories_map_subdirectories_to_classes() {
        let dir = tempfile::tempdir().unwrap();
        for (class, value) in [("cat", 0u8), ("dog", 255u8)] {
            let sub = dir.path().join(class);
            fs::create_dir(&sub).unwrap();
            for i in 0..2 {
                fs::write(sub.join(format!("{i}.pgm")), pgm(2, 2, &[value; 4])).unwrap();
            }
        }
        let d = load_dataset(dir.path(), DataFormat::infer(dir.path())).unwrap();
        assert_eq!(d.labels(), Some(&[0, 0, 1, 1][..]));
        assert_eq!(d.samples().row(3), &[1.0; 4]);
        fs::write(dir.path().join("dog").join("9.pgm"), pgm(1, 1, &[0])).unwrap();
        assert!(matches!(load_dataset(dir.path(), DataFormat::Pnm), Err(Error::Parse { .. })));
    }
}
