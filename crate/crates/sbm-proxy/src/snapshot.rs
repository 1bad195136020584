//! Binary state snapshots.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic      8 bytes  "SBMSNAP\0"
//! version    u32      1
//! ranges     6 x i64  ids ide kds kde jds jde
//! nkr        u64
//! x1, ratio  2 x f64
//! ncat       u32, then per category: u32 byte length + UTF-8 name
//! T_OLD      f64 per point
//! pressure   f64 per point
//! bins       per category: f64 per (point, bin)
//! ```
//!
//! Points in the body are ordered with `i` outermost, then `k`, then `j`,
//! and bins innermost. Values are stored as raw bit patterns, so a round trip
//! is exact.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use sbm_proxy_core::driver::{Domain, GridState, IndexRange};
use sbm_proxy_core::{Category, MassGrid, NUM_CATEGORIES};

use crate::error::{AppError, Result};

pub const MAGIC: [u8; 8] = *b"SBMSNAP\0";
pub const VERSION: u32 = 1;

/// Flat state indices in snapshot body order.
fn body_order(domain: &Domain) -> impl Iterator<Item = usize> + '_ {
    let (i, k, j) = (domain.i, domain.k, domain.j);
    (i.start..=i.end).flat_map(move |ii| {
        (k.start..=k.end).flat_map(move |kk| (j.start..=j.end).map(move |jj| domain.index(ii, kk, jj)))
    })
}

pub fn write_snapshot<W: Write>(state: &GridState, mut w: W) -> io::Result<()> {
    let d = state.domain();
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for r in [d.i, d.k, d.j] {
        w.write_all(&r.start.to_le_bytes())?;
        w.write_all(&r.end.to_le_bytes())?;
    }
    w.write_all(&(state.nkr() as u64).to_le_bytes())?;
    w.write_all(&state.grid().x1().to_le_bytes())?;
    w.write_all(&state.grid().ratio().to_le_bytes())?;
    w.write_all(&(NUM_CATEGORIES as u32).to_le_bytes())?;
    for cat in Category::ALL {
        let name = cat.name().as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
    }
    for field in [state.t_old(), state.pressure()] {
        for p in body_order(d) {
            w.write_all(&field[p].to_le_bytes())?;
        }
    }
    for cat in Category::ALL {
        for p in body_order(d) {
            for v in state.distribution(p, cat) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> io::Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b)?;
        Ok(b)
    }

    fn u32(&mut self) -> io::Result<u32> {
        self.bytes().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> io::Result<u64> {
        self.bytes().map(u64::from_le_bytes)
    }

    fn i64(&mut self) -> io::Result<i64> {
        self.bytes().map(i64::from_le_bytes)
    }

    fn f64(&mut self) -> io::Result<f64> {
        self.bytes().map(f64::from_le_bytes)
    }
}

/// Why a byte stream is not a snapshot.
#[derive(Debug)]
pub enum SnapshotError {
    Io(io::Error),
    Format(String),
}

impl From<io::Error> for SnapshotError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            SnapshotError::Format("truncated".to_string())
        } else {
            SnapshotError::Io(e)
        }
    }
}

fn format_err(msg: impl Into<String>) -> SnapshotError {
    SnapshotError::Format(msg.into())
}

pub fn read_snapshot<R: Read>(r: R) -> Result<GridState, SnapshotError> {
    let mut r = Reader { inner: r };
    if r.bytes::<8>()? != MAGIC {
        return Err(format_err("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let mut ranges = [IndexRange { start: 1, end: 1 }; 3];
    for range in &mut ranges {
        let (start, end) = (r.i64()?, r.i64()?);
        *range = IndexRange::new(start, end).map_err(|e| format_err(e.to_string()))?;
    }
    let domain = Domain {
        i: ranges[0],
        k: ranges[1],
        j: ranges[2],
    };
    let nkr = usize::try_from(r.u64()?).map_err(|_| format_err("nkr does not fit in memory"))?;
    let (x1, ratio) = (r.f64()?, r.f64()?);
    let grid = MassGrid::new(nkr, x1, ratio).map_err(|e| format_err(e.to_string()))?;

    let ncat = r.u32()? as usize;
    if ncat != NUM_CATEGORIES {
        return Err(format_err(format!("{ncat} categories, expected {NUM_CATEGORIES}")));
    }
    let mut order = Vec::with_capacity(ncat);
    for _ in 0..ncat {
        let len = r.u32()? as usize;
        if len > 64 {
            return Err(format_err("category name too long"));
        }
        let mut name = vec![0u8; len];
        r.inner.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| format_err("category name is not UTF-8"))?;
        let cat: Category = name
            .parse()
            .map_err(|_| format_err(format!("unknown category {name:?}")))?;
        if order.contains(&cat) {
            return Err(format_err(format!("category {name} listed twice")));
        }
        order.push(cat);
    }

    let n = domain.npoints();
    let point_len = NUM_CATEGORIES * nkr;
    let mut t_old = vec![0.0; n];
    let mut pressure = vec![0.0; n];
    for field in [&mut t_old, &mut pressure] {
        for p in body_order(&domain) {
            field[p] = r.f64()?;
        }
    }
    let mut bins = vec![0.0; n * point_len];
    for cat in order {
        for p in body_order(&domain) {
            for v in &mut bins[p * point_len + cat.index() * nkr..][..nkr] {
                *v = r.f64()?;
            }
        }
    }
    if r.inner.read(&mut [0u8; 1])? != 0 {
        return Err(format_err("trailing bytes after body"));
    }
    GridState::new(domain, grid, t_old, pressure, bins).map_err(|e| format_err(e.to_string()))
}

pub fn save(state: &GridState, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| AppError::io(path, e))?;
    write_snapshot(state, BufWriter::new(file)).map_err(|e| AppError::io(path, e))
}

pub fn load(path: &Path) -> Result<GridState> {
    let file = File::open(path).map_err(|e| AppError::io(path, e))?;
    read_snapshot(BufReader::new(file)).map_err(|e| match e {
        SnapshotError::Io(e) => AppError::io(path, e),
        SnapshotError::Format(message) => AppError::Snapshot {
            path: path.to_path_buf(),
            message,
        },
    })
}
