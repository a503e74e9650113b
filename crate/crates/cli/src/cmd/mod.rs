pub mod bench;
pub mod eval;
pub mod nms;
pub mod selfcheck;
pub mod tile;

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Result;
use rotdet_core::dota::{parse_task1, Task1Record};

use crate::failure::{list_files, read_to_string, stem, Failure};

/// Category named by a task-1 file: `Task1_<class>.txt` or `<class>.txt`.
pub fn task1_category(path: &Path) -> String {
    let s = stem(path);
    s.strip_prefix("Task1_").map(str::to_string).unwrap_or(s)
}

/// Every `.txt` task-1 file in `dir`, keyed by category. Malformed lines are
/// a contract error.
pub fn read_task1_dir(dir: &Path) -> Result<BTreeMap<String, Vec<Task1Record>>> {
    let mut out = BTreeMap::new();
    for path in list_files(dir)? {
        if path.extension().is_none_or(|e| e != "txt") {
            continue;
        }
        let parsed = parse_task1(&read_to_string(&path)?);
        if let Some(e) = parsed.errors.first() {
            return Err(Failure::contract(format!("{}: {e}", path.display())));
        }
        out.insert(task1_category(&path), parsed.records);
    }
    Ok(out)
}
