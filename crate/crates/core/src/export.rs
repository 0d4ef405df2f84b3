//! On-disk formats: the VVF binary container, training tensor stacks and
//! trajectory CSV files.
//!
//! A VVF file is a 20-byte header followed by little-endian `f32` values:
//!
//! | offset | type    | field                        |
//! |--------|---------|------------------------------|
//! | 0      | [u8; 4] | magic `VVF1`                 |
//! | 4      | u16     | version (1)                  |
//! | 6      | u16     | channels                     |
//! | 8      | u32     | length_px (columns)          |
//! | 12     | u32     | width_px (rows)              |
//! | 16     | u32     | frame_count                  |
//!
//! The payload is ordered frame, then channel, then row-major cells. Field
//! files carry three channels per frame: occupancy code, `vx`, `vy` (m/s).

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array3, Array4, Axis};
use thiserror::Error;

use crate::flowfield::VelocityField;
use crate::raster::{GridGeometry, GridSpec, Occupancy, OccupancyGrid};
use crate::scene::{Trajectory, Vec2, FRAME_DT};

pub const MAGIC: [u8; 4] = *b"VVF1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;
pub const FIELD_CHANNELS: usize = 3;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("trajectory csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("trajectory csv row {row}: {message}")]
    Format { row: usize, message: String },
}

/// Frames of equally sized multi-channel images, `(frame, channel, row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VvfFile {
    pub data: Array4<f32>,
}

impl VvfFile {
    pub fn new(data: Array4<f32>) -> Self {
        Self { data }
    }

    /// Occupancy, `vx` and `vy` per observed frame.
    pub fn from_frames(grids: &[OccupancyGrid], fields: &[VelocityField]) -> Result<Self, ExportError> {
        let stack = TensorStack::build(grids, fields)?;
        let (h, _, cols) = stack.initial.dim();
        let rows = stack.initial.dim().1 / FIELD_CHANNELS;
        let data = stack
            .initial
            .into_shape_with_order((h, FIELD_CHANNELS, rows, cols))
            .expect("contiguous stack");
        Ok(Self { data })
    }

    pub fn frame_count(&self) -> usize {
        self.data.dim().0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn width_px(&self) -> usize {
        self.data.dim().2
    }

    pub fn length_px(&self) -> usize {
        self.data.dim().3
    }

    pub fn byte_len(&self) -> usize {
        HEADER_LEN + 4 * self.data.len()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), ExportError> {
        let (frames, channels, rows, cols) = self.data.dim();
        let narrow = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| ExportError::ShapeMismatch(format!("{what} {v} does not fit the header")))
        };
        let channels = u16::try_from(channels)
            .map_err(|_| ExportError::ShapeMismatch(format!("{channels} channels do not fit the header")))?;
        let mut header = Vec::with_capacity(HEADER_LEN);
        header.extend_from_slice(&MAGIC);
        header.extend_from_slice(&VERSION.to_le_bytes());
        header.extend_from_slice(&channels.to_le_bytes());
        header.extend_from_slice(&narrow(cols, "length")?.to_le_bytes());
        header.extend_from_slice(&narrow(rows, "width")?.to_le_bytes());
        header.extend_from_slice(&narrow(frames, "frame count")?.to_le_bytes());
        out.write_all(&header)?;
        let mut payload = Vec::with_capacity(4 * self.data.len());
        for v in self.data.iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&payload)?;
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, ExportError> {
        let mut header = [0u8; HEADER_LEN];
        input.read_exact(&mut header).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => ExportError::CorruptFile("truncated header".into()),
            _ => ExportError::Io(e),
        })?;
        if header[..4] != MAGIC {
            return Err(ExportError::CorruptFile("bad magic".into()));
        }
        let u16_at = |o: usize| u16::from_le_bytes([header[o], header[o + 1]]);
        let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().expect("4 bytes")) as usize;
        let version = u16_at(4);
        if version != VERSION {
            return Err(ExportError::CorruptFile(format!("unsupported version {version}")));
        }
        let (channels, cols, rows, frames) = (u16_at(6) as usize, u32_at(8), u32_at(12), u32_at(16));
        let count = [frames, channels, rows, cols]
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4).map(|_| n))
            .ok_or_else(|| ExportError::CorruptFile("header dimensions overflow".into()))?;
        let mut payload = Vec::new();
        input.read_to_end(&mut payload)?;
        if payload.len() != 4 * count {
            return Err(ExportError::CorruptFile(format!(
                "payload is {} bytes, header implies {}",
                payload.len(),
                4 * count
            )));
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let data = Array4::from_shape_vec((frames, channels, rows, cols), values).expect("size checked");
        Ok(Self { data })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), ExportError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ExportError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// Network input tensors for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorStack {
    /// `(h, 3 * rows, cols)`: per frame, occupancy, `vx` and `vy` stacked
    /// vertically.
    pub initial: Array3<f32>,
    /// `(3, h * rows, cols)`: per channel, the frames stacked vertically.
    pub reconstructed: Array3<f32>,
}

impl TensorStack {
    pub fn build(grids: &[OccupancyGrid], fields: &[VelocityField]) -> Result<Self, ExportError> {
        if grids.len() != fields.len() || grids.is_empty() {
            return Err(ExportError::ShapeMismatch(format!(
                "{} occupancy grids and {} fields",
                grids.len(),
                fields.len()
            )));
        }
        let (rows, cols) = grids[0].cells.dim();
        for (g, f) in grids.iter().zip(fields) {
            if g.cells.dim() != (rows, cols) || f.vx.dim() != (rows, cols) || f.vy.dim() != (rows, cols) {
                return Err(ExportError::ShapeMismatch(format!(
                    "frame is not {rows}x{cols}: occupancy {:?}, field {:?}",
                    g.cells.dim(),
                    f.vx.dim()
                )));
            }
        }
        let mut initial = Array3::zeros((grids.len(), FIELD_CHANNELS * rows, cols));
        for (k, (g, f)) in grids.iter().zip(fields).enumerate() {
            let mut frame = initial.index_axis_mut(Axis(0), k);
            frame.slice_mut(s![0..rows, ..]).assign(&g.cells.mapv(|c| c.code() as f32));
            frame.slice_mut(s![rows..2 * rows, ..]).assign(&f.vx.mapv(|v| v as f32));
            frame.slice_mut(s![2 * rows.., ..]).assign(&f.vy.mapv(|v| v as f32));
        }
        Ok(Self::from_initial(initial, rows))
    }

    /// Re-index an `(h, 3 * rows, cols)` stack.
    pub fn from_initial(initial: Array3<f32>, rows: usize) -> Self {
        let (h, _, cols) = initial.dim();
        let mut reconstructed = Array3::zeros((FIELD_CHANNELS, h * rows, cols));
        for k in 0..h {
            for c in 0..FIELD_CHANNELS {
                reconstructed
                    .slice_mut(s![c, k * rows..(k + 1) * rows, ..])
                    .assign(&initial.slice(s![k, c * rows..(c + 1) * rows, ..]));
            }
        }
        Self { initial, reconstructed }
    }

    pub fn from_vvf(file: &VvfFile) -> Result<Self, ExportError> {
        let (h, channels, rows, cols) = file.data.dim();
        if channels != FIELD_CHANNELS || h == 0 {
            return Err(ExportError::ShapeMismatch(format!(
                "expected {FIELD_CHANNELS} channels and at least one frame, got {channels} channels, {h} frames"
            )));
        }
        let initial = file
            .data
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((h, channels * rows, cols))
            .expect("contiguous");
        Ok(Self::from_initial(initial, rows))
    }

    /// The reconstructed layout as a one-frame, three-channel container.
    pub fn to_vvf(&self) -> VvfFile {
        let (c, hr, cols) = self.reconstructed.dim();
        VvfFile::new(
            self.reconstructed
                .clone()
                .into_shape_with_order((1, c, hr, cols))
                .expect("contiguous"),
        )
    }
}

/// Occupancy codes, `vx` and `vy` of one stored frame.
pub type DecodedFrame = (ndarray::Array2<Occupancy>, ndarray::Array2<f64>, ndarray::Array2<f64>);

/// Occupancy grids and velocity fields decoded from a field file.
pub fn decode_frames(file: &VvfFile) -> Result<Vec<DecodedFrame>, ExportError> {
    if file.channels() != FIELD_CHANNELS {
        return Err(ExportError::ShapeMismatch(format!(
            "expected {FIELD_CHANNELS} channels, got {}",
            file.channels()
        )));
    }
    file.data
        .outer_iter()
        .enumerate()
        .map(|(k, frame)| {
            let occ = frame
                .index_axis(Axis(0), 0)
                .iter()
                .map(|&v| {
                    (v.fract() == 0.0 && (0.0..=255.0).contains(&v))
                        .then(|| Occupancy::from_code(v as u8))
                        .flatten()
                        .ok_or_else(|| ExportError::CorruptFile(format!("frame {k}: occupancy value {v}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let dim = (file.width_px(), file.length_px());
            let occ = ndarray::Array2::from_shape_vec(dim, occ).expect("frame shape");
            let vx = frame.index_axis(Axis(0), 1).mapv(f64::from);
            let vy = frame.index_axis(Axis(0), 2).mapv(f64::from);
            Ok((occ, vx, vy))
        })
        .collect()
}

/// Placed occupancy grids and velocity fields from a field file, at the
/// default cell size. Each frame is target-centric: the target sits in the
/// anchor column and on the mean row of its occupied cells.
pub fn decode_fields(file: &VvfFile) -> Result<Vec<(OccupancyGrid, VelocityField)>, ExportError> {
    let spec = GridSpec::with_dims(file.length_px(), file.width_px());
    decode_frames(file)?
        .into_iter()
        .enumerate()
        .map(|(k, (cells, vx, vy))| {
            let rows: Vec<usize> = cells
                .indexed_iter()
                .filter(|(_, &c)| c == Occupancy::OccupiedTV)
                .map(|((r, _), _)| r)
                .collect();
            if rows.is_empty() {
                return Err(ExportError::CorruptFile(format!("frame {k} has no target cells")));
            }
            let mean_row = rows.iter().sum::<usize>() as f64 / rows.len() as f64;
            let mut geometry = GridGeometry::tv_centric(spec, 0.0);
            geometry.origin.y = -(mean_row + 0.5) * spec.res_lat();
            Ok((OccupancyGrid { cells, geometry }, VelocityField { vx, vy, geometry }))
        })
        .collect()
}

pub const TRAJECTORY_HEADER: [&str; 3] = ["t_s", "x_m", "y_m"];

/// Consecutive trajectories in one CSV; a new one starts wherever `t_s`
/// stops increasing.
pub fn write_trajectories<W: Write>(out: W, trajectories: &[Trajectory]) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for t in trajectories {
        for (time, p) in t.times().zip(&t.points) {
            w.write_record([format!("{time:.1}"), p.x.to_string(), p.y.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectories<R: Read>(input: R) -> Result<Vec<Trajectory>, ExportError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().map(str::trim).ne(TRAJECTORY_HEADER) {
        return Err(ExportError::Format {
            row: 1,
            message: format!("expected header {}", TRAJECTORY_HEADER.join(",")),
        });
    }
    let mut runs: Vec<(Vec<f64>, Vec<Vec2>)> = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = idx + 2;
        if rec.len() != 3 {
            return Err(ExportError::Format {
                row,
                message: format!("expected 3 fields, got {}", rec.len()),
            });
        }
        let num = |k: usize| {
            rec[k].trim().parse::<f64>().map_err(|_| ExportError::Format {
                row,
                message: format!("`{}` is not a number", &rec[k]),
            })
        };
        let (t, x, y) = (num(0)?, num(1)?, num(2)?);
        match runs.last_mut() {
            Some((times, points)) if times.last().is_some_and(|&last| t > last) => {
                times.push(t);
                points.push(Vec2::new(x, y));
            }
            _ => runs.push((vec![t], vec![Vec2::new(x, y)])),
        }
    }
    let out = runs
        .into_iter()
        .map(|(times, points)| {
            let dt = match times.as_slice() {
                [a, b, ..] => b - a,
                [a] if *a > 0.0 => *a,
                _ => FRAME_DT,
            };
            Trajectory {
                points,
                dt,
                extrapolated: false,
            }
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{rasterize_frame, PipelineConfig};
    use crate::scenario::two_vehicle_scenario;
    use proptest::prelude::*;

    fn frames(h: usize, spec: GridSpec) -> (Vec<OccupancyGrid>, Vec<VelocityField>) {
        let geometry = GridGeometry::tv_centric(spec, 0.0);
        let (rows, cols) = (spec.width_px, spec.length_px);
        let grids = (0..h)
            .map(|k| OccupancyGrid {
                cells: ndarray::Array2::from_shape_fn((rows, cols), |(r, c)| match (r + c + k) % 7 {
                    0 => Occupancy::OccupiedSV,
                    1 => Occupancy::OccupiedTV,
                    _ => Occupancy::Free,
                }),
                geometry,
            })
            .collect();
        let fields = (0..h)
            .map(|k| VelocityField {
                vx: ndarray::Array2::from_shape_fn((rows, cols), |(r, c)| 30.0 + (k * 1000 + r * cols + c) as f64 * 1e-3),
                vy: ndarray::Array2::from_shape_fn((rows, cols), |(r, c)| -((k + r + c) as f64) * 0.01),
                geometry,
            })
            .collect();
        (grids, fields)
    }

    fn sorted_bits(a: impl Iterator<Item = f32>) -> Vec<u32> {
        let mut v: Vec<u32> = a.map(f32::to_bits).collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn tensor_shapes_and_permutation() {
        let (g, f) = frames(10, GridSpec::default());
        let stack = TensorStack::build(&g, &f).unwrap();
        assert_eq!(stack.initial.dim(), (10, 96, 256));
        assert_eq!(stack.reconstructed.dim(), (3, 320, 256));
        assert_eq!(sorted_bits(stack.initial.iter().copied()), sorted_bits(stack.reconstructed.iter().copied()));
        // frame 4, vx channel, row 7, col 100
        assert_eq!(stack.initial[[4, 32 + 7, 100]], stack.reconstructed[[1, 4 * 32 + 7, 100]]);
        assert_eq!(stack.initial[[4, 32 + 7, 100]], f[4].vx[[7, 100]] as f32);
        assert_eq!(stack.reconstructed[[0, 9 * 32 + 3, 5]], g[9].cells[[3, 5]].code() as f32);

        let (g, f) = frames(1, GridSpec::default());
        let one = TensorStack::build(&g, &f).unwrap();
        assert_eq!(one.initial.dim(), (1, 96, 256));
        assert_eq!(one.reconstructed.dim(), (3, 32, 256));
    }

    #[test]
    fn tensor_shape_mismatch() {
        let (g, f) = frames(2, GridSpec::with_dims(16, 8));
        assert!(matches!(TensorStack::build(&g, &f[..1]), Err(ExportError::ShapeMismatch(_))));
        let (g2, _) = frames(1, GridSpec::with_dims(8, 8));
        assert!(matches!(
            TensorStack::build(&[g[0].clone(), g2[0].clone()], &f),
            Err(ExportError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn vvf_round_trip_bit_exact() {
        let (g, f) = frames(3, GridSpec::with_dims(24, 8));
        let file = VvfFile::from_frames(&g, &f).unwrap();
        assert_eq!((file.frame_count(), file.channels(), file.width_px(), file.length_px()), (3, 3, 8, 24));
        let mut buf = Vec::new();
        file.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), file.byte_len());
        assert_eq!(&buf[..4], b"VVF1");
        let back = VvfFile::read_from(&buf[..]).unwrap();
        assert_eq!(sorted_bits(back.data.iter().copied()), sorted_bits(file.data.iter().copied()));
        assert!(back.data.iter().zip(file.data.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));

        let decoded = decode_frames(&back).unwrap();
        assert_eq!(decoded[2].0, g[2].cells);
        assert_eq!(decoded[1].1[[3, 4]], f[1].vx[[3, 4]] as f32 as f64);
    }

    #[test]
    fn smallest_file_layout() {
        let file = VvfFile::new(Array4::from_elem((1, 1, 1, 1), 1.5f32));
        let mut buf = Vec::new();
        file.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 24);
        let mut expected = b"VVF1".to_vec();
        expected.extend([1, 0, 1, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        expected.extend(1.5f32.to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn corrupt_files_rejected() {
        let file = VvfFile::new(Array4::from_elem((2, 3, 2, 2), 0.25f32));
        let mut buf = Vec::new();
        file.write_to(&mut buf).unwrap();

        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(VvfFile::read_from(truncated), Err(ExportError::CorruptFile(_))));
        assert!(matches!(VvfFile::read_from(&buf[..10]), Err(ExportError::CorruptFile(_))));

        let mut magic = buf.clone();
        magic[0] = b'X';
        assert!(matches!(VvfFile::read_from(&magic[..]), Err(ExportError::CorruptFile(_))));

        let mut version = buf.clone();
        version[4] = 2;
        assert!(matches!(VvfFile::read_from(&version[..]), Err(ExportError::CorruptFile(_))));

        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(VvfFile::read_from(&extra[..]), Err(ExportError::CorruptFile(_))));
    }

    #[test]
    fn tensors_through_container() {
        let (g, f) = frames(4, GridSpec::with_dims(16, 8));
        let stack = TensorStack::build(&g, &f).unwrap();
        let file = VvfFile::from_frames(&g, &f).unwrap();
        assert_eq!(TensorStack::from_vvf(&file).unwrap(), stack);
        let packed = stack.to_vvf();
        assert_eq!((packed.frame_count(), packed.channels(), packed.width_px(), packed.length_px()), (1, 3, 32, 16));
        assert!(TensorStack::from_vvf(&VvfFile::new(Array4::zeros((1, 2, 2, 2)))).is_err());
    }

    #[test]
    fn decode_rejects_bad_occupancy() {
        let mut data = Array4::zeros((1, 3, 2, 2));
        data[[0, 0, 1, 1]] = 0.5;
        assert!(matches!(decode_frames(&VvfFile::new(data)), Err(ExportError::CorruptFile(_))));
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let a = Trajectory::new((1..=25).map(|j| Vec2::new(6.0 * j as f64, 0.01 * j as f64)).collect());
        let b = Trajectory::new(vec![Vec2::new(1.0, -2.0), Vec2::new(2.5, -2.25)]);
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &[a.clone(), b.clone()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t_s,x_m,y_m\n0.2,6,0.01\n"));
        let back = read_trajectories(&buf[..]).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].points, a.points);
        assert_eq!(back[1].points, b.points);
        assert!((back[0].dt - 0.2).abs() < 1e-12);
    }

    #[test]
    fn trajectory_csv_errors() {
        assert!(matches!(read_trajectories(&b"t,x,y\n"[..]), Err(ExportError::Format { row: 1, .. })));
        let bad = b"t_s,x_m,y_m\n0.2,1,2\n0.4,abc,2\n";
        assert!(matches!(read_trajectories(&bad[..]), Err(ExportError::Format { row: 3, .. })));
        assert!(read_trajectories(&b"t_s,x_m,y_m\n"[..]).unwrap().is_empty());
    }

    #[test]
    fn decoded_fields_recover_placement() {
        let seq = two_vehicle_scenario(10.0).to_sequence().unwrap();
        let config = PipelineConfig::default();
        let (grids, fields): (Vec<_>, Vec<_>) = seq
            .frames
            .iter()
            .map(|f| {
                let (occ, _) = rasterize_frame(f, &config).unwrap();
                let field = VelocityField::zeros(occ.geometry);
                (occ, field)
            })
            .unzip();
        let file = VvfFile::from_frames(&grids, &fields).unwrap();
        let decoded = decode_fields(&file).unwrap();
        assert_eq!(decoded.len(), grids.len());
        for ((occ, field), original) in decoded.iter().zip(&grids) {
            assert_eq!(occ.cells, original.cells);
            assert_eq!(field.geometry, occ.geometry);
            assert_eq!(occ.geometry.origin.x, original.geometry.origin.x);
            assert!((occ.geometry.origin.y - original.geometry.origin.y).abs() <= original.geometry.spec.res_lat() / 2.0);
        }

        let empty = VvfFile::new(Array4::zeros((1, 3, 4, 8)));
        assert!(matches!(decode_fields(&empty), Err(ExportError::CorruptFile(_))));
    }

    proptest! {
        #[test]
        fn vvf_round_trip_random(
            dims in (1usize..4, 1usize..4, 1usize..6, 1usize..6),
            seed in any::<u32>(),
        ) {
            let (f, c, r, l) = dims;
            let data = Array4::from_shape_fn((f, c, r, l), |(a, b, x, y)| {
                f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add((a * 1000 + b * 100 + x * 10 + y) as u32) & 0x7f7f_ffff)
            });
            let file = VvfFile::new(data);
            let mut buf = Vec::new();
            file.write_to(&mut buf).unwrap();
            prop_assert_eq!(buf.len(), HEADER_LEN + 4 * f * c * r * l);
            let back = VvfFile::read_from(&buf[..]).unwrap();
            prop_assert!(back.data.iter().zip(file.data.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(back.data.dim(), file.data.dim());
        }
    }
}
