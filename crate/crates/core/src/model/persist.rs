//! Line-delimited JSON persistence for trajectories and the TK cache.
//!
//! A pool file starts with a header line marking it as a pool; raw run logs
//! have no header. The TK cache lives in a sibling `<stem>.tk.jsonl` file.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{DemoPool, Trajectory};
use crate::error::{Error, Result};
use crate::retriever::TkRecord;

pub const POOL_HEADER: &str = r#"{"format":"dice-pool","version":1}"#;

/// Optional format header and numbered records.
pub type Jsonl<T> = (Option<String>, Vec<(usize, T)>);

/// Parsed non-blank lines paired with their 1-based line numbers. A leading
/// `{"format": ...}` header line is returned separately.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Jsonl<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text)
}

fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Jsonl<T>> {
    let mut header = None;
    let mut records = Vec::new();
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if first {
            first = false;
            if let Some(format) = header_format(line) {
                header = Some(format);
                continue;
            }
        }
        let record =
            serde_json::from_str(line).map_err(|e| Error::Format { line: lineno, message: strip_position(&e) })?;
        records.push((lineno, record));
    }
    Ok((header, records))
}

fn header_format(line: &str) -> Option<String> {
    let value: serde_json::Value = serde_json::from_str(line).ok()?;
    let obj = value.as_object()?;
    if obj.contains_key("steps") || obj.contains_key("tk_text") {
        return None;
    }
    obj.get("format")?.as_str().map(str::to_owned)
}

// serde_json appends "at line 1 column N" which is meaningless per record.
fn strip_position(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    match msg.rfind(" at line ") {
        Some(pos) => msg[..pos].to_string(),
        None => msg,
    }
}

fn encode_lines<T: Serialize>(header: Option<&str>, records: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    if let Some(h) = header {
        out.extend_from_slice(h.as_bytes());
        out.push(b'\n');
    }
    for r in records {
        serde_json::to_writer(&mut out, &r).map_err(|e| Error::InvalidInput(e.to_string()))?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} has no file name", path.display())))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp.{}", std::process::id()));
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn tk_cache_path(pool_path: &Path) -> PathBuf {
    let stem = pool_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "pool".into());
    pool_path.with_file_name(format!("{stem}.tk.jsonl"))
}

pub fn save_runs(runs: &[Trajectory], path: &Path) -> Result<()> {
    write_atomic(path, &encode_lines(None, runs)?)
}

/// Raw run log: successful and failed trajectories alike.
pub fn load_runs(path: &Path) -> Result<Vec<Trajectory>> {
    let (_, records) = read_jsonl::<Trajectory>(path)?;
    Ok(records.into_iter().map(|(_, t)| t).collect())
}

pub fn save_pool(pool: &DemoPool, path: &Path) -> Result<()> {
    write_atomic(path, &encode_lines(Some(POOL_HEADER), pool.entries())?)?;
    let cache = tk_cache_path(path);
    if pool.tk_cache().is_empty() {
        if cache.exists() {
            fs::remove_file(&cache).map_err(|e| Error::io(&cache, e))?;
        }
        Ok(())
    } else {
        save_tk_cache(pool, &cache)
    }
}

/// Loads a pool file and, when present, its sibling TK cache. Every record
/// must be a successful trajectory with a unique id.
pub fn load_pool(path: &Path) -> Result<DemoPool> {
    let (_, records) = read_jsonl::<Trajectory>(path)?;
    let mut ids = std::collections::HashSet::new();
    for (line, t) in &records {
        if !t.success {
            return Err(Error::Format {
                line: *line,
                message: format!("record {} has success = false; pool files admit only successful trajectories", t.id),
            });
        }
        if !ids.insert(t.id.as_str()) {
            return Err(Error::Format { line: *line, message: format!("duplicate id {}", t.id) });
        }
    }
    let mut pool = DemoPool::new(records.into_iter().map(|(_, t)| t).collect())?;
    let cache = tk_cache_path(path);
    if cache.exists() {
        for record in load_tk_cache(&cache)? {
            pool.insert_tk(record);
        }
    }
    Ok(pool)
}

/// Writes the cache under an advisory lock so concurrent processes do not
/// interleave cache rewrites.
pub fn save_tk_cache(pool: &DemoPool, path: &Path) -> Result<()> {
    let lock_path = path.with_extension("lock");
    let lock = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&lock_path)
        .map_err(|e| Error::io(&lock_path, e))?;
    lock.lock().map_err(|e| Error::io(&lock_path, e))?;
    let ordered = pool.entries().iter().filter_map(|t| pool.tk(&t.id));
    let result = encode_lines(None, ordered).and_then(|bytes| write_atomic(path, &bytes));
    let _ = lock.unlock();
    result
}

pub fn load_tk_cache(path: &Path) -> Result<Vec<TkRecord>> {
    let (_, records) = read_jsonl::<TkRecord>(path)?;
    Ok(records.into_iter().map(|(_, r)| r).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Action, Step};
    use crate::EmbeddingVector;

    fn demo(task: &str) -> Trajectory {
        let steps = vec![
            Step::new(Some("look it up".into()), Action::search(task).unwrap(), "para"),
            Step::new(None, Action::finish("x").unwrap(), ""),
        ];
        Trajectory::binary(task, steps, true).unwrap()
    }

    #[test]
    fn empty_pool_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.jsonl");
        save_pool(&DemoPool::default(), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1, "header only");
        assert!(load_pool(&path).unwrap().is_empty());
    }

    #[test]
    fn pool_with_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.jsonl");
        let mut pool = DemoPool::new(vec![demo("a"), demo("b"), demo("c")]).unwrap();
        let emb = EmbeddingVector::new(vec![0.6, 0.8, 1e-17]).unwrap();
        pool.insert_tk(TkRecord::new(pool.entries()[1].id.clone(), "retry shorter", emb, "fp"));
        save_pool(&pool, &path).unwrap();
        assert!(tk_cache_path(&path).exists());
        assert_eq!(load_pool(&path).unwrap(), pool);

        // a cache-less save removes the stale sibling
        pool.clear_tk_cache();
        save_pool(&pool, &path).unwrap();
        assert_eq!(load_pool(&path).unwrap(), pool);
    }

    #[test]
    fn missing_field_is_named_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.jsonl");
        let good = serde_json::to_string(&demo("a")).unwrap();
        let bad = r#"{"id":"x","success":true,"score":1.0,"steps":[]}"#;
        fs::write(&path, format!("{POOL_HEADER}\n{good}\n{bad}\n")).unwrap();
        match load_pool(&path).unwrap_err() {
            Error::Format { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("task"), "{message}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn pool_rejects_failures_but_runs_accept_them() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.jsonl");
        let fail =
            Trajectory::binary("q", vec![Step::new(None, Action::finish("no").unwrap(), "done")], false).unwrap();
        save_runs(&[demo("a"), fail], &path).unwrap();
        assert_eq!(load_runs(&path).unwrap().len(), 2);
        assert!(matches!(load_pool(&path), Err(Error::Format { line: 2, .. })));
    }
}
