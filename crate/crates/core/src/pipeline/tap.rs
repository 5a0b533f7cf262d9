use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{read_u32, read_u64, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MessageKind {
    Forward,
    Backward,
}

/// Wire traffic between neighbouring stages. Forward payloads are
/// activations, backward payloads the loss gradient with respect to them.
#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub kind: MessageKind,
    pub iteration: u64,
    pub microbatch: u32,
    pub payload: Tensor,
}

/// What the curious stage keeps from one inbound forward message.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationRecord {
    pub iteration: u64,
    pub microbatch: u32,
    pub seq_len: u32,
    pub tensor: Tensor,
}

/// Copies a forward message into a record and hands back the original
/// message untouched. Backward messages are not recorded.
pub fn tap_activations(message: Message) -> (Option<ActivationRecord>, Message) {
    let record = (message.kind == MessageKind::Forward).then(|| ActivationRecord {
        iteration: message.iteration,
        microbatch: message.microbatch,
        seq_len: message.payload.rows() as u32,
        tensor: message.payload.clone(),
    });
    (record, message)
}

/// Passive recorder on the attacker's inbound edge. Observing never fails:
/// write errors are held back and reported by [`ActivationTap::finish`].
#[derive(Debug, Default)]
pub struct ActivationTap {
    keep: bool,
    records: Vec<ActivationRecord>,
    dump: Option<BufWriter<File>>,
    dump_path: Option<PathBuf>,
    deferred: Option<io::Error>,
}

impl ActivationTap {
    pub fn in_memory() -> Self {
        ActivationTap {
            keep: true,
            ..Default::default()
        }
    }

    /// Streams records to an append-only dump file and, if `keep` is set,
    /// also holds them in memory.
    pub fn with_dump(path: &Path, keep: bool) -> Result<Self> {
        let file = File::options().create(true).append(true).open(path)?;
        Ok(ActivationTap {
            keep,
            dump: Some(BufWriter::new(file)),
            dump_path: Some(path.to_path_buf()),
            ..Default::default()
        })
    }

    pub fn observe(&mut self, message: &Message) {
        if message.kind != MessageKind::Forward {
            return;
        }
        let record = ActivationRecord {
            iteration: message.iteration,
            microbatch: message.microbatch,
            seq_len: message.payload.rows() as u32,
            tensor: message.payload.clone(),
        };
        if self.deferred.is_none() {
            if let Some(w) = &mut self.dump {
                if let Err(e) = write_record(w, &record) {
                    self.deferred = Some(e);
                }
            }
        }
        if self.keep {
            self.records.push(record);
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dump_path(&self) -> Option<&Path> {
        self.dump_path.as_deref()
    }

    /// Flushes the dump and returns the in-memory records, or the first
    /// storage error met while recording.
    pub fn finish(mut self) -> Result<Vec<ActivationRecord>> {
        if let Some(e) = self.deferred.take() {
            return Err(Error::Io(e));
        }
        if let Some(mut w) = self.dump.take() {
            w.flush()?;
        }
        Ok(self.records)
    }
}

fn write_record<W: Write>(w: &mut W, r: &ActivationRecord) -> io::Result<()> {
    w.write_all(&r.iteration.to_le_bytes())?;
    w.write_all(&r.microbatch.to_le_bytes())?;
    w.write_all(&r.seq_len.to_le_bytes())?;
    r.tensor
        .write_aiat(w)
        .map_err(|e| io::Error::new(io::ErrorKind::Other, e.to_string()))
}

pub fn write_activation_dump(path: &Path, records: &[ActivationRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        write_record(&mut w, r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads every record of an activation dump.
pub fn read_activation_dump(path: &Path) -> Result<Vec<ActivationRecord>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    loop {
        if r.fill_buf()?.is_empty() {
            break;
        }
        let iteration = read_u64(&mut r)?;
        let microbatch = read_u32(&mut r)?;
        let seq_len = read_u32(&mut r)?;
        let tensor = Tensor::read_aiat(&mut r)?;
        if tensor.rows() != seq_len as usize {
            return Err(Error::Format(format!(
                "record ({iteration}, {microbatch}) claims {seq_len} rows but holds {}",
                tensor.rows()
            )));
        }
        out.push(ActivationRecord {
            iteration,
            microbatch,
            seq_len,
            tensor,
        });
    }
    Ok(out)
}
