//! On-disk state: one directory per epoch plus a `CURRENT` pointer.
//!
//! ```text
//! state/
//!   CURRENT            -> "epoch-0002"
//!   .lock              present while a command mutates the directory
//!   epoch-0000/ ...    context.json queries.json lattice.json support.json
//!                      counters.json partition.csv lattice.dot meta.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use flowlattice::engine::{CounterSnapshot, CounterStore};
use flowlattice::lattice::LatticeDump;
use flowlattice::measurement::{QueryDoc, SupportDump};
use flowlattice::{ConceptLattice, FormalContext, MeasurementSupport, Query};
use serde::{Deserialize, Serialize};

pub const CURRENT: &str = "CURRENT";
const LOCK: &str = ".lock";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta {
    pub epoch: u64,
    pub command: String,
}

/// Everything stored in one epoch directory, fully decoded.
pub struct Snapshot {
    pub epoch: u64,
    pub lattice: ConceptLattice,
    pub support: MeasurementSupport,
    pub counters: CounterStore,
}

/// The raw files of an epoch, before any cross-checking.
pub struct RawEpoch {
    pub dir: PathBuf,
    pub context: String,
    pub queries: String,
    pub lattice: String,
    pub support: String,
    pub counters: String,
    pub partition: String,
}

pub fn epoch_name(epoch: u64) -> String {
    format!("epoch-{epoch:04}")
}

/// Exclusive hold on a state directory, released on drop.
pub struct Lock {
    path: PathBuf,
}

impl Lock {
    pub fn acquire(state: &Path) -> Result<Lock> {
        fs::create_dir_all(state).with_context(|| format!("creating {}", state.display()))?;
        let path = state.join(LOCK);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Lock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!("state directory {} is locked by another command ({})", state.display(), path.display())
            }
            Err(e) => Err(e).with_context(|| format!("locking {}", state.display())),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn current_epoch(state: &Path) -> Result<Option<u64>> {
    let pointer = state.join(CURRENT);
    if !pointer.exists() {
        return Ok(None);
    }
    let name = fs::read_to_string(&pointer)?;
    let epoch = name
        .trim()
        .strip_prefix("epoch-")
        .and_then(|n| n.parse().ok())
        .with_context(|| format!("bad CURRENT pointer `{}`", name.trim()))?;
    Ok(Some(epoch))
}

fn require_epoch(state: &Path, epoch: Option<u64>) -> Result<u64> {
    match epoch {
        Some(e) => Ok(e),
        None => current_epoch(state)?.with_context(|| format!("no state in {}", state.display())),
    }
}

pub fn read_raw(state: &Path, epoch: Option<u64>) -> Result<RawEpoch> {
    let dir = state.join(epoch_name(require_epoch(state, epoch)?));
    let read = |name: &str| fs::read_to_string(dir.join(name)).with_context(|| format!("reading {}", dir.join(name).display()));
    Ok(RawEpoch {
        context: read("context.json")?,
        queries: read("queries.json")?,
        lattice: read("lattice.json")?,
        support: read("support.json")?,
        counters: read("counters.json")?,
        partition: read("partition.csv")?,
        dir,
    })
}

/// Decodes an epoch, trusting the dumps as written.
pub fn load(state: &Path) -> Result<Snapshot> {
    let epoch = require_epoch(state, None)?;
    let raw = read_raw(state, Some(epoch))?;
    let ctx = FormalContext::from_json_str(&raw.context).context("context.json")?;
    let ldump: LatticeDump = serde_json::from_str(&raw.lattice).context("lattice.json")?;
    let lattice = ConceptLattice::from_dump(ctx, &ldump).context("lattice.json")?;
    let sdump: SupportDump = serde_json::from_str(&raw.support).context("support.json")?;
    let support = MeasurementSupport::from_dump(&lattice, &sdump).context("support.json")?;
    let snap: CounterSnapshot = serde_json::from_str(&raw.counters).context("counters.json")?;
    let counters = CounterStore::restore(&support, lattice.context().num_flows(), &snap).context("counters.json")?;
    Ok(Snapshot {
        epoch,
        lattice,
        support,
        counters,
    })
}

/// `counter,ground,vector,flows`; flows are `;`-separated names.
pub fn partition_csv(lat: &ConceptLattice, support: &MeasurementSupport) -> String {
    let mut out = String::from("counter,ground,vector,flows\n");
    for (i, g) in support.grounds().iter().enumerate() {
        let flows = support.grounded(*g).cloned().unwrap_or_default();
        let vector = support.vector(*g).map(|v| v.to_bitstring()).unwrap_or_default();
        out.push_str(&format!("{i},{g},{vector},{}\n", lat.context().names_of(&flows).join(";")));
    }
    out
}

pub fn queries_json(queries: &[Query], ctx: &FormalContext) -> String {
    let docs: Vec<QueryDoc> = Query::to_docs(queries, ctx);
    serde_json::to_string_pretty(&docs).expect("queries serialize")
}

/// Writes `snap` as the next epoch and moves `CURRENT` to it. The epoch is
/// assembled in a scratch directory and renamed into place.
pub fn write(state: &Path, snap: &Snapshot, command: &str) -> Result<PathBuf> {
    let lat = &snap.lattice;
    let ctx = lat.context();
    let name = epoch_name(snap.epoch);
    let dir = state.join(&name);
    if dir.exists() {
        bail!("{} already exists", dir.display());
    }
    let scratch = state.join(format!(".{name}.tmp"));
    if scratch.exists() {
        fs::remove_dir_all(&scratch)?;
    }
    fs::create_dir_all(&scratch)?;
    let put = |file: &str, body: String| fs::write(scratch.join(file), body).with_context(|| format!("writing {file}"));
    put("context.json", ctx.to_json_string())?;
    put("queries.json", queries_json(snap.support.queries(), ctx))?;
    put("lattice.json", serde_json::to_string_pretty(&lat.to_dump())?)?;
    put("support.json", serde_json::to_string_pretty(&snap.support.to_dump(lat))?)?;
    put("counters.json", serde_json::to_string_pretty(&snap.counters.snapshot())?)?;
    put("partition.csv", partition_csv(lat, &snap.support))?;
    put("lattice.dot", lat.to_dot())?;
    let meta = Meta {
        epoch: snap.epoch,
        command: command.to_string(),
    };
    put("meta.json", serde_json::to_string_pretty(&meta)?)?;
    fs::rename(&scratch, &dir)?;
    let pointer_tmp = state.join(".CURRENT.tmp");
    fs::write(&pointer_tmp, format!("{name}\n"))?;
    fs::rename(&pointer_tmp, state.join(CURRENT))?;
    Ok(dir)
}
