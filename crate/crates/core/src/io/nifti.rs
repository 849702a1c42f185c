//! Single-file NIfTI-1 (`.nii`, `.nii.gz`).
//!
//! Arrays are `(z, y, x)` with `x` fastest, which is the on-disk voxel order.
//! Only spacing and origin are taken from the spatial transform; axis flips
//! and rotations are kept in [`NiftiMeta`] but not applied.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use ndarray::Array3;

use crate::error::{Error, Result};
use crate::volume::{LabelVolume, ScalarVolume};

pub const HEADER_SIZE: usize = 348;
/// Header, then four zero extension bytes.
pub const VOX_OFFSET: usize = 352;
const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
const MAGIC_PAIR: &[u8; 4] = b"ni1\0";
const NIFTI2_HEADER_SIZE: i32 = 540;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Datatype {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::I32 => 8,
            Datatype::F32 => 16,
            Datatype::F64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Option<Self> {
        Some(match code {
            2 => Datatype::U8,
            4 => Datatype::I16,
            8 => Datatype::I32,
            16 => Datatype::F32,
            64 => Datatype::F64,
            _ => return None,
        })
    }

    pub fn bytes(self) -> usize {
        match self {
            Datatype::U8 => 1,
            Datatype::I16 => 2,
            Datatype::I32 | Datatype::F32 => 4,
            Datatype::F64 => 8,
        }
    }

    pub fn bitpix(self) -> i16 {
        self.bytes() as i16 * 8
    }

    pub const ALL: [Datatype; 5] = [
        Datatype::U8,
        Datatype::I16,
        Datatype::I32,
        Datatype::F32,
        Datatype::F64,
    ];
}

/// Voxel payload as stored, before intensity scaling.
#[derive(Debug, Clone, PartialEq)]
pub enum VoxelData {
    U8(Array3<u8>),
    I16(Array3<i16>),
    I32(Array3<i32>),
    F32(Array3<f32>),
    F64(Array3<f64>),
}

impl VoxelData {
    pub fn datatype(&self) -> Datatype {
        match self {
            VoxelData::U8(_) => Datatype::U8,
            VoxelData::I16(_) => Datatype::I16,
            VoxelData::I32(_) => Datatype::I32,
            VoxelData::F32(_) => Datatype::F32,
            VoxelData::F64(_) => Datatype::F64,
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        let d = match self {
            VoxelData::U8(a) => a.dim(),
            VoxelData::I16(a) => a.dim(),
            VoxelData::I32(a) => a.dim(),
            VoxelData::F32(a) => a.dim(),
            VoxelData::F64(a) => a.dim(),
        };
        [d.0, d.1, d.2]
    }

    pub fn to_f64(&self) -> Array3<f64> {
        match self {
            VoxelData::U8(a) => a.mapv(f64::from),
            VoxelData::I16(a) => a.mapv(f64::from),
            VoxelData::I32(a) => a.mapv(f64::from),
            VoxelData::F32(a) => a.mapv(f64::from),
            VoxelData::F64(a) => a.clone(),
        }
    }

    fn encode(&self, endian: Endian, out: &mut Vec<u8>) {
        macro_rules! put {
            ($a:expr) => {
                for v in $a.iter() {
                    match endian {
                        Endian::Little => out.extend_from_slice(&v.to_le_bytes()),
                        Endian::Big => out.extend_from_slice(&v.to_be_bytes()),
                    }
                }
            };
        }
        match self {
            VoxelData::U8(a) => out.extend(a.iter()),
            VoxelData::I16(a) => put!(a),
            VoxelData::I32(a) => put!(a),
            VoxelData::F32(a) => put!(a),
            VoxelData::F64(a) => put!(a),
        }
    }

    fn decode(dt: Datatype, shape: [usize; 3], bytes: &[u8], endian: Endian) -> Self {
        let sh = (shape[0], shape[1], shape[2]);
        macro_rules! get {
            ($t:ty, $variant:ident) => {{
                const N: usize = std::mem::size_of::<$t>();
                let v: Vec<$t> = bytes
                    .chunks_exact(N)
                    .map(|c| {
                        let arr: [u8; N] = c.try_into().unwrap();
                        match endian {
                            Endian::Little => <$t>::from_le_bytes(arr),
                            Endian::Big => <$t>::from_be_bytes(arr),
                        }
                    })
                    .collect();
                VoxelData::$variant(Array3::from_shape_vec(sh, v).unwrap())
            }};
        }
        match dt {
            Datatype::U8 => VoxelData::U8(Array3::from_shape_vec(sh, bytes.to_vec()).unwrap()),
            Datatype::I16 => get!(i16, I16),
            Datatype::I32 => get!(i32, I32),
            Datatype::F32 => get!(f32, F32),
            Datatype::F64 => get!(f64, F64),
        }
    }
}

/// The header fields this reader understands, in file precision.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiMeta {
    /// `(nz, ny, nx)`.
    pub shape: [usize; 3],
    /// `pixdim[1..=3]`, i.e. `(sx, sy, sz)` in file order.
    pub pixdim: [f32; 3],
    /// `pixdim[0]`, the qform handedness factor.
    pub qfac: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub qform_code: i16,
    pub sform_code: i16,
    /// `quatern_b, quatern_c, quatern_d, qoffset_x, qoffset_y, qoffset_z`.
    pub quatern: [f32; 6],
    pub srow: [[f32; 4]; 3],
    pub xyzt_units: u8,
    pub descrip: String,
}

impl NiftiMeta {
    /// Axis-aligned geometry with an sform. `spacing`/`origin` are `(z, y, x)`.
    pub fn axis_aligned(shape: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Self {
        let (sx, sy, sz) = (spacing[2] as f32, spacing[1] as f32, spacing[0] as f32);
        let (ox, oy, oz) = (origin[2] as f32, origin[1] as f32, origin[0] as f32);
        Self {
            shape,
            pixdim: [sx, sy, sz],
            qfac: 1.0,
            scl_slope: 0.0,
            scl_inter: 0.0,
            qform_code: 0,
            sform_code: 1,
            quatern: [0.0, 0.0, 0.0, ox, oy, oz],
            srow: [[sx, 0.0, 0.0, ox], [0.0, sy, 0.0, oy], [0.0, 0.0, sz, oz]],
            // millimetres and seconds
            xyzt_units: 2 | 8,
            descrip: String::new(),
        }
    }

    /// `(z, y, x)` spacing from `pixdim`.
    pub fn spacing(&self) -> [f64; 3] {
        [
            self.pixdim[2] as f64,
            self.pixdim[1] as f64,
            self.pixdim[0] as f64,
        ]
    }

    /// `(z, y, x)` origin from the sform, else the qform offset, else zero.
    pub fn origin(&self) -> [f64; 3] {
        let (x, y, z) = if self.sform_code > 0 {
            (self.srow[0][3], self.srow[1][3], self.srow[2][3])
        } else if self.qform_code > 0 {
            (self.quatern[3], self.quatern[4], self.quatern[5])
        } else {
            (0.0, 0.0, 0.0)
        };
        [z as f64, y as f64, x as f64]
    }

    fn scaled(&self) -> bool {
        self.scl_slope != 0.0 && !(self.scl_slope == 1.0 && self.scl_inter == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NiftiImage {
    pub meta: NiftiMeta,
    pub data: VoxelData,
}

impl NiftiImage {
    pub fn new(meta: NiftiMeta, data: VoxelData) -> Result<Self> {
        if meta.shape != data.shape() {
            return Err(Error::Shape(format!(
                "header shape {:?} does not match data {:?}",
                meta.shape,
                data.shape()
            )));
        }
        Ok(Self { meta, data })
    }

    /// Written as u8 when every label fits, i16 otherwise, i32 beyond that.
    pub fn from_label_volume(v: &LabelVolume) -> Self {
        let meta = NiftiMeta::axis_aligned(v.shape(), v.spacing, v.origin);
        let max = v.max_label();
        let data = if max <= u8::MAX as u16 {
            VoxelData::U8(v.voxels.mapv(|x| x as u8))
        } else if max <= i16::MAX as u16 {
            VoxelData::I16(v.voxels.mapv(|x| x as i16))
        } else {
            VoxelData::I32(v.voxels.mapv(i32::from))
        };
        Self { meta, data }
    }

    pub fn from_scalar_volume(v: &ScalarVolume, datatype: Datatype) -> Self {
        let meta = NiftiMeta::axis_aligned(v.shape(), v.spacing, v.origin);
        let d = &v.data;
        let data = match datatype {
            Datatype::U8 => VoxelData::U8(d.mapv(|x| x.round().clamp(0.0, 255.0) as u8)),
            Datatype::I16 => {
                VoxelData::I16(d.mapv(|x| x.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16))
            }
            Datatype::I32 => {
                VoxelData::I32(d.mapv(|x| x.round().clamp(i32::MIN as f64, i32::MAX as f64) as i32))
            }
            Datatype::F32 => VoxelData::F32(d.mapv(|x| x as f32)),
            Datatype::F64 => VoxelData::F64(d.clone()),
        };
        Self { meta, data }
    }

    /// Voxel values with `scl_slope`/`scl_inter` applied when the slope is
    /// nonzero.
    pub fn values(&self) -> Array3<f64> {
        let mut v = self.data.to_f64();
        if self.meta.scaled() {
            let (s, i) = (self.meta.scl_slope as f64, self.meta.scl_inter as f64);
            v.mapv_inplace(|x| x * s + i);
        }
        v
    }

    pub fn to_scalar_volume(&self) -> Result<ScalarVolume> {
        ScalarVolume::new(self.values(), self.meta.spacing(), self.meta.origin())
    }

    /// Fails unless every (scaled) value is a non-negative integer that fits u16.
    pub fn to_label_volume(&self) -> Result<LabelVolume> {
        let values = self.values();
        let mut bad = 0usize;
        let mut example = 0.0;
        let voxels = values.mapv(|x| {
            if x.fract() == 0.0 && (0.0..=u16::MAX as f64).contains(&x) {
                x as u16
            } else {
                if bad == 0 {
                    example = x;
                }
                bad += 1;
                0
            }
        });
        if bad > 0 {
            return Err(Error::Data(format!(
                "{bad} voxels are not valid label ids (e.g. {example})"
            )));
        }
        LabelVolume::new(voxels, self.meta.spacing(), self.meta.origin())
    }
}

struct HeaderWriter {
    buf: Vec<u8>,
    endian: Endian,
}

impl HeaderWriter {
    fn put(&mut self, offset: usize, bytes: &[u8]) {
        self.buf[offset..offset + bytes.len()].copy_from_slice(bytes);
    }

    fn i16(&mut self, offset: usize, v: i16) {
        let b = match self.endian {
            Endian::Little => v.to_le_bytes(),
            Endian::Big => v.to_be_bytes(),
        };
        self.put(offset, &b);
    }

    fn i32(&mut self, offset: usize, v: i32) {
        let b = match self.endian {
            Endian::Little => v.to_le_bytes(),
            Endian::Big => v.to_be_bytes(),
        };
        self.put(offset, &b);
    }

    fn f32(&mut self, offset: usize, v: f32) {
        let b = match self.endian {
            Endian::Little => v.to_le_bytes(),
            Endian::Big => v.to_be_bytes(),
        };
        self.put(offset, &b);
    }
}

/// Serialises with the given byte order. Files written by this crate are
/// little-endian; big-endian output exists for testing readers.
pub fn encode_nifti_with_endianness(img: &NiftiImage, endian: Endian) -> Vec<u8> {
    let m = &img.meta;
    let dt = img.data.datatype();
    let mut w = HeaderWriter {
        buf: vec![0u8; VOX_OFFSET],
        endian,
    };
    w.i32(0, HEADER_SIZE as i32);
    w.put(38, b"r");
    let [nz, ny, nx] = m.shape;
    for (i, d) in [3, nx, ny, nz, 1, 1, 1, 1].into_iter().enumerate() {
        w.i16(40 + 2 * i, d as i16);
    }
    w.i16(70, dt.code());
    w.i16(72, dt.bitpix());
    let pix = [
        m.qfac,
        m.pixdim[0],
        m.pixdim[1],
        m.pixdim[2],
        0.0,
        0.0,
        0.0,
        0.0,
    ];
    for (i, p) in pix.into_iter().enumerate() {
        w.f32(76 + 4 * i, p);
    }
    w.f32(108, VOX_OFFSET as f32);
    w.f32(112, m.scl_slope);
    w.f32(116, m.scl_inter);
    w.put(123, &[m.xyzt_units]);
    let desc = m.descrip.as_bytes();
    w.put(148, &desc[..desc.len().min(79)]);
    w.i16(252, m.qform_code);
    w.i16(254, m.sform_code);
    for (i, q) in m.quatern.into_iter().enumerate() {
        w.f32(256 + 4 * i, q);
    }
    for (r, row) in m.srow.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            w.f32(280 + 16 * r + 4 * c, *v);
        }
    }
    w.put(344, MAGIC_SINGLE);
    let mut out = w.buf;
    out.reserve(m.shape.iter().product::<usize>() * dt.bytes());
    img.data.encode(endian, &mut out);
    out
}

pub fn encode_nifti(img: &NiftiImage) -> Vec<u8> {
    encode_nifti_with_endianness(img, Endian::Little)
}

struct HeaderReader<'a> {
    buf: &'a [u8],
    endian: Endian,
}

impl HeaderReader<'_> {
    fn bytes<const N: usize>(&self, offset: usize) -> [u8; N] {
        self.buf[offset..offset + N].try_into().unwrap()
    }

    fn i16(&self, offset: usize) -> i16 {
        match self.endian {
            Endian::Little => i16::from_le_bytes(self.bytes(offset)),
            Endian::Big => i16::from_be_bytes(self.bytes(offset)),
        }
    }

    fn f32(&self, offset: usize) -> f32 {
        match self.endian {
            Endian::Little => f32::from_le_bytes(self.bytes(offset)),
            Endian::Big => f32::from_be_bytes(self.bytes(offset)),
        }
    }
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

/// Byte order from the `sizeof_hdr` sentinel.
pub fn detect_endianness(bytes: &[u8]) -> Result<Endian> {
    if bytes.len() < 4 {
        return Err(parse_err(bytes.len(), "file too short for sizeof_hdr"));
    }
    let raw: [u8; 4] = bytes[..4].try_into().unwrap();
    match (i32::from_le_bytes(raw), i32::from_be_bytes(raw)) {
        (348, _) => Ok(Endian::Little),
        (_, 348) => Ok(Endian::Big),
        (NIFTI2_HEADER_SIZE, _) | (_, NIFTI2_HEADER_SIZE) => {
            Err(parse_err(0, "NIfTI-2 files are not supported"))
        }
        (le, _) => Err(parse_err(0, format!("sizeof_hdr is {le}, expected 348"))),
    }
}

/// Parses an uncompressed single-file image.
pub fn decode_nifti(bytes: &[u8]) -> Result<NiftiImage> {
    let endian = detect_endianness(bytes)?;
    if bytes.len() < HEADER_SIZE {
        return Err(parse_err(
            bytes.len(),
            format!("header truncated ({} of 348 bytes)", bytes.len()),
        ));
    }
    let h = HeaderReader { buf: bytes, endian };
    let magic: [u8; 4] = h.bytes(344);
    if &magic == MAGIC_PAIR {
        return Err(parse_err(
            344,
            "header/image pairs (.hdr/.img) are not supported",
        ));
    }
    if &magic != MAGIC_SINGLE {
        return Err(parse_err(344, format!("bad magic {magic:?}")));
    }
    let ndim = h.i16(40);
    if !(3..=4).contains(&ndim) {
        return Err(parse_err(
            40,
            format!("dim[0] = {ndim}; only 3-D images are supported"),
        ));
    }
    let dims: Vec<i16> = (1..=ndim as usize).map(|i| h.i16(40 + 2 * i)).collect();
    if let Some((i, d)) = dims.iter().enumerate().find(|(_, &d)| d < 1) {
        return Err(parse_err(42 + 2 * i, format!("dim[{}] = {d}", i + 1)));
    }
    if ndim == 4 && dims[3] != 1 {
        return Err(parse_err(
            48,
            format!("4-D image with {} frames is not supported", dims[3]),
        ));
    }
    let (nx, ny, nz) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    let code = h.i16(70);
    let dt = Datatype::from_code(code)
        .ok_or_else(|| parse_err(70, format!("unsupported datatype {code}")))?;
    let bitpix = h.i16(72);
    if bitpix != dt.bitpix() {
        return Err(parse_err(
            72,
            format!("bitpix {bitpix} does not match datatype {code}"),
        ));
    }
    let vox_offset = h.f32(108);
    if !(vox_offset >= HEADER_SIZE as f32 && vox_offset.fract() == 0.0) {
        return Err(parse_err(108, format!("invalid vox_offset {vox_offset}")));
    }
    let off = vox_offset as usize;
    let len = nx * ny * nz * dt.bytes();
    if bytes.len() < off + len {
        return Err(parse_err(
            bytes.len(),
            format!(
                "voxel data truncated: need {} bytes from offset {off}, file has {}",
                len,
                bytes.len()
            ),
        ));
    }
    let descrip_raw = &bytes[148..228];
    let end = descrip_raw
        .iter()
        .position(|&b| b == 0)
        .unwrap_or(descrip_raw.len());
    let mut srow = [[0f32; 4]; 3];
    for (r, row) in srow.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = h.f32(280 + 16 * r + 4 * c);
        }
    }
    let meta = NiftiMeta {
        shape: [nz, ny, nx],
        pixdim: [h.f32(80), h.f32(84), h.f32(88)],
        qfac: h.f32(76),
        scl_slope: h.f32(112),
        scl_inter: h.f32(116),
        qform_code: h.i16(252),
        sform_code: h.i16(254),
        quatern: std::array::from_fn(|i| h.f32(256 + 4 * i)),
        srow,
        xyzt_units: bytes[123],
        descrip: String::from_utf8_lossy(&descrip_raw[..end]).into_owned(),
    };
    if let Some(i) = meta
        .pixdim
        .iter()
        .position(|p| !(p.is_finite() && *p > 0.0))
    {
        return Err(parse_err(
            80 + 4 * i,
            format!(
                "pixdim[{}] = {} is not a valid spacing",
                i + 1,
                meta.pixdim[i]
            ),
        ));
    }
    let data = VoxelData::decode(dt, meta.shape, &bytes[off..off + len], endian);
    Ok(NiftiImage { meta, data })
}

fn is_gz_path(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

/// Reads `.nii` or gzip-compressed `.nii.gz` (detected from the content).
pub fn read_nifti(path: impl AsRef<Path>) -> Result<NiftiImage> {
    let path = path.as_ref();
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        out
    } else {
        raw
    };
    decode_nifti(&bytes)
}

/// Writes little-endian; gzip-compressed when the path ends in `.gz`.
pub fn write_nifti(img: &NiftiImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_nifti(img);
    let out = if is_gz_path(path) {
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes
    };
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_label_volume(path: impl AsRef<Path>) -> Result<LabelVolume> {
    read_nifti(path)?.to_label_volume()
}

pub fn write_label_volume(v: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    write_nifti(&NiftiImage::from_label_volume(v), path)
}

pub fn read_scalar_volume(path: impl AsRef<Path>) -> Result<ScalarVolume> {
    read_nifti(path)?.to_scalar_volume()
}

pub fn write_scalar_volume(
    v: &ScalarVolume,
    datatype: Datatype,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_nifti(&NiftiImage::from_scalar_volume(v, datatype), path)
}
