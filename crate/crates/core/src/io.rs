//! On-disk formats: volumes, cases, plans, probability plans and dataset
//! manifests.
//!
//! Volumes are a single-line JSON header followed by a raw little-endian
//! payload (z slowest, x fastest). A case file is a header line followed by
//! the PTV, CTV, urethra and rectum volumes in that order. Plans, probability
//! plans and manifests are JSON documents.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::anatomy::{AnatomyCase, MmPoint, Structure};
use crate::error::{Error, Result};
use crate::grid::{GridPoint, TemplateGrid};
use crate::plan::{NeedlePlan, ProbPlan, SeedPlan};

pub const VOLUME_MAGIC: &str = "SPVOL1";
pub const CASE_MAGIC: &str = "SPCASE1";
pub const PLAN_MAGIC: &str = "SPPLAN1";
pub const PROB_MAGIC: &str = "SPPROB1";
pub const MANIFEST_MAGIC: &str = "SPMANIFEST1";

fn header_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Header(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    F32le,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::F32le => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct VolumeHeader {
    magic: String,
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    dtype: Dtype,
    payload_bytes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VolumeData {
    U8(Array3<u8>),
    F32(Array3<f32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    /// `[dz, dy, dx]` mm.
    pub spacing: [f64; 3],
    pub data: VolumeData,
}

impl Volume {
    pub fn dims(&self) -> (usize, usize, usize) {
        match &self.data {
            VolumeData::U8(a) => a.dim(),
            VolumeData::F32(a) => a.dim(),
        }
    }
}

pub fn write_volume<W: Write>(mut w: W, volume: &Volume) -> Result<()> {
    let (nz, ny, nx) = volume.dims();
    let (dtype, payload): (Dtype, Vec<u8>) = match &volume.data {
        VolumeData::U8(a) => (Dtype::U8, a.iter().copied().collect()),
        VolumeData::F32(a) => (Dtype::F32le, a.iter().flat_map(|v| v.to_le_bytes()).collect()),
    };
    let header = VolumeHeader {
        magic: VOLUME_MAGIC.into(),
        dims: [nz, ny, nx],
        spacing_mm: volume.spacing,
        dtype,
        payload_bytes: payload.len(),
    };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    w.write_all(&payload)?;
    Ok(())
}

fn read_header_line<R: BufRead>(r: &mut R) -> Result<String> {
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return header_err("missing header line");
    }
    line.pop();
    String::from_utf8(line).or_else(|_| header_err("header is not UTF-8"))
}

pub fn read_volume<R: BufRead>(r: &mut R) -> Result<Volume> {
    let line = read_header_line(r)?;
    let header: VolumeHeader = serde_json::from_str(&line).or_else(|e| header_err(format!("volume header: {e}")))?;
    if header.magic != VOLUME_MAGIC {
        return header_err(format!("expected magic {VOLUME_MAGIC}, got {}", header.magic));
    }
    if header.spacing_mm.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return header_err("spacing must be positive");
    }
    let [nz, ny, nx] = header.dims;
    let n = nz
        .checked_mul(ny)
        .and_then(|v| v.checked_mul(nx))
        .ok_or_else(|| Error::Header("dims overflow".into()))?;
    let expected = n * header.dtype.size();
    if header.payload_bytes != expected {
        return Err(Error::PayloadMismatch {
            expected,
            found: header.payload_bytes,
        });
    }
    let mut payload = Vec::with_capacity(expected);
    r.take(expected as u64).read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(Error::PayloadMismatch {
            expected,
            found: payload.len(),
        });
    }
    let shape = (nz, ny, nx);
    let data = match header.dtype {
        Dtype::U8 => VolumeData::U8(Array3::from_shape_vec(shape, payload).expect("length checked")),
        Dtype::F32le => VolumeData::F32(
            Array3::from_shape_vec(
                shape,
                payload
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect(),
            )
            .expect("length checked"),
        ),
    };
    Ok(Volume {
        spacing: header.spacing_mm,
        data,
    })
}

fn ensure_consumed<R: Read>(r: &mut R, expected: usize) -> Result<()> {
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.is_empty() {
        Ok(())
    } else {
        Err(Error::PayloadMismatch {
            expected,
            found: expected + rest.len(),
        })
    }
}

pub fn write_volume_file(path: impl AsRef<Path>, volume: &Volume) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write_volume(&mut f, volume)?;
    f.flush()?;
    Ok(())
}

pub fn read_volume_file(path: impl AsRef<Path>) -> Result<Volume> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let v = read_volume(&mut r)?;
    let (nz, ny, nx) = v.dims();
    let size = match v.data {
        VolumeData::U8(_) => 1,
        VolumeData::F32(_) => 4,
    };
    ensure_consumed(&mut r, nz * ny * nx * size)?;
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CaseHeader {
    magic: String,
    case_id: String,
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    /// `[x, y, z]` mm.
    template_origin_mm: [f64; 3],
    volumes: Vec<String>,
}

pub fn write_case<W: Write>(mut w: W, case: &AnatomyCase) -> Result<()> {
    let (nz, ny, nx) = case.dims();
    let o = case.template_origin;
    let header = CaseHeader {
        magic: CASE_MAGIC.into(),
        case_id: case.case_id.clone(),
        dims: [nz, ny, nx],
        spacing_mm: case.spacing,
        template_origin_mm: [o.x, o.y, o.z],
        volumes: Structure::ALL.iter().map(|s| s.name().to_string()).collect(),
    };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    for s in Structure::ALL {
        write_volume(
            &mut w,
            &Volume {
                spacing: case.spacing,
                data: VolumeData::U8(case.mask(s).clone()),
            },
        )?;
    }
    Ok(())
}

pub fn read_case<R: BufRead>(r: &mut R) -> Result<AnatomyCase> {
    let line = read_header_line(r)?;
    let header: CaseHeader = serde_json::from_str(&line).or_else(|e| header_err(format!("case header: {e}")))?;
    if header.magic != CASE_MAGIC {
        return header_err(format!("expected magic {CASE_MAGIC}, got {}", header.magic));
    }
    let names: Vec<&str> = Structure::ALL.iter().map(|s| s.name()).collect();
    if header.volumes != names {
        return header_err(format!("case volumes must be {names:?}, got {:?}", header.volumes));
    }
    let [nz, ny, nx] = header.dims;
    let mut masks = Vec::with_capacity(4);
    for name in &names {
        let v = read_volume(r)?;
        if v.dims() != (nz, ny, nx) || v.spacing != header.spacing_mm {
            return header_err(format!("{name} volume geometry differs from the case header"));
        }
        match v.data {
            VolumeData::U8(a) => {
                if a.iter().any(|&b| b > 1) {
                    return Err(Error::Validation(format!("{name} mask payload is not binary")));
                }
                masks.push(a);
            }
            VolumeData::F32(_) => return header_err(format!("{name} mask must be u8")),
        }
    }
    let rectum = masks.pop().expect("four masks");
    let urethra = masks.pop().expect("four masks");
    let ctv = masks.pop().expect("four masks");
    let ptv = masks.pop().expect("four masks");
    let [ox, oy, oz] = header.template_origin_mm;
    AnatomyCase::new(header.case_id, header.spacing_mm, MmPoint::new(ox, oy, oz), ptv, ctv, urethra, rectum)
}

pub fn write_case_file(path: impl AsRef<Path>, case: &AnatomyCase) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write_case(&mut f, case)?;
    f.flush()?;
    Ok(())
}

pub fn read_case_file(path: impl AsRef<Path>) -> Result<AnatomyCase> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let case = read_case(&mut r)?;
    let (nz, ny, nx) = case.dims();
    ensure_consumed(&mut r, 4 * nz * ny * nx)?;
    Ok(case)
}

/// Template description as stored in plan files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDoc {
    pub rows: usize,
    pub cols: usize,
    pub planes: usize,
    /// `[in-plane, plane]` mm.
    pub spacing_mm: [f64; 2],
    pub excluded_rows: Vec<usize>,
}

impl From<&TemplateGrid> for GridDoc {
    fn from(g: &TemplateGrid) -> Self {
        Self {
            rows: g.rows,
            cols: g.cols,
            planes: g.num_planes,
            spacing_mm: [g.in_plane_spacing, g.plane_spacing],
            excluded_rows: g.excluded_rows().to_vec(),
        }
    }
}

impl GridDoc {
    pub fn to_grid(&self) -> Result<TemplateGrid> {
        TemplateGrid::new(
            self.rows,
            self.cols,
            self.spacing_mm[0],
            self.spacing_mm[1],
            self.planes,
            self.excluded_rows.iter().copied(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PlanDoc {
    magic: String,
    grid: GridDoc,
    needles: Vec<[usize; 2]>,
    seeds: Vec<[usize; 3]>,
    #[serde(rename = "source_strength_U")]
    source_strength: f64,
    case_id: String,
}

/// A plan file: the needle plan and the seeds placed on it.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanFile {
    pub needles: NeedlePlan,
    pub seeds: SeedPlan,
}

impl PlanFile {
    /// A plan whose needles are exactly its occupied seed columns.
    pub fn from_seeds(seeds: SeedPlan) -> Self {
        Self {
            needles: seeds.needles(),
            seeds,
        }
    }

    pub fn to_json(&self) -> String {
        let doc = PlanDoc {
            magic: PLAN_MAGIC.into(),
            grid: GridDoc::from(self.seeds.grid()),
            needles: self.needles.positions().into_iter().map(|(r, c)| [r, c]).collect(),
            seeds: self.seeds.seeds().into_iter().map(|s| [s.row, s.col, s.plane]).collect(),
            source_strength: self.seeds.source_strength,
            case_id: self.seeds.case_id.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PlanDoc = serde_json::from_str(text)?;
        if doc.magic != PLAN_MAGIC {
            return header_err(format!("expected magic {PLAN_MAGIC}, got {}", doc.magic));
        }
        let grid = doc.grid.to_grid()?;
        let needles = NeedlePlan::from_positions(grid.clone(), doc.needles.iter().map(|&[r, c]| (r, c)))?;
        let mut seeds = SeedPlan::new(grid.clone(), doc.source_strength).with_case_id(doc.case_id);
        for [r, c, p] in doc.seeds {
            let gp = GridPoint::new(r, c, p);
            if !grid.contains(gp) {
                return Err(Error::Validation(format!("seed {gp:?} outside template")));
            }
            seeds.insert(gp)?;
        }
        Ok(Self { needles, seeds })
    }
}

pub fn write_plan_file(path: impl AsRef<Path>, plan: &PlanFile) -> Result<()> {
    fs::write(path, plan.to_json())?;
    Ok(())
}

pub fn read_plan_file(path: impl AsRef<Path>) -> Result<PlanFile> {
    PlanFile::from_json(&fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProbDoc {
    magic: String,
    grid: GridDoc,
    needles: Vec<[usize; 2]>,
    dims: [usize; 3],
    values: Vec<f64>,
    case_id: String,
}

/// A probability-plan file with the needle plan it was predicted for.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbPlanFile {
    pub pred: ProbPlan,
    pub needles: NeedlePlan,
    pub case_id: String,
}

impl ProbPlanFile {
    pub fn to_json(&self) -> String {
        let (a, b, c) = self.pred.values().dim();
        let doc = ProbDoc {
            magic: PROB_MAGIC.into(),
            grid: GridDoc::from(self.pred.grid()),
            needles: self.needles.positions().into_iter().map(|(r, c)| [r, c]).collect(),
            dims: [a, b, c],
            values: self.pred.values().iter().copied().collect(),
            case_id: self.case_id.clone(),
        };
        serde_json::to_string(&doc).expect("prob plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ProbDoc = serde_json::from_str(text)?;
        if doc.magic != PROB_MAGIC {
            return header_err(format!("expected magic {PROB_MAGIC}, got {}", doc.magic));
        }
        let grid = doc.grid.to_grid()?;
        let [a, b, c] = doc.dims;
        if a * b * c != doc.values.len() {
            return Err(Error::PayloadMismatch {
                expected: a * b * c,
                found: doc.values.len(),
            });
        }
        let values = Array3::from_shape_vec((a, b, c), doc.values).expect("length checked");
        let needles = NeedlePlan::from_positions(grid.clone(), doc.needles.iter().map(|&[r, c]| (r, c)))?;
        Ok(Self {
            pred: ProbPlan::new(grid, values)?,
            needles,
            case_id: doc.case_id,
        })
    }
}

pub fn write_prob_plan_file(path: impl AsRef<Path>, plan: &ProbPlanFile) -> Result<()> {
    fs::write(path, plan.to_json())?;
    Ok(())
}

pub fn read_prob_plan_file(path: impl AsRef<Path>) -> Result<ProbPlanFile> {
    ProbPlanFile::from_json(&fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub case_id: String,
    /// Paths relative to the manifest's directory.
    pub case: String,
    pub needles: String,
    pub plan: String,
    pub split: Split,
    pub volume_cc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub magic: String,
    pub master_seed: u64,
    pub augmented_train_samples: usize,
    pub cases: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        if m.magic != MANIFEST_MAGIC {
            return header_err(format!("expected magic {MANIFEST_MAGIC}, got {}", m.magic));
        }
        Ok(m)
    }

    pub fn split_count(&self, split: Split) -> usize {
        self.cases.iter().filter(|c| c.split == split).count()
    }
}

pub fn read_manifest_file(path: impl AsRef<Path>) -> Result<Manifest> {
    Manifest::from_json(&fs::read_to_string(path)?)
}
