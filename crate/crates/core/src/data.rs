//! Rating ingestion, implicit-feedback filtering and per-user five-fold splits.
//!
//! Input files are `user, item, rating[, timestamp]` rows separated by tabs
//! or commas (detected from the first non-empty line).
//!
//! On-disk cache layout written by [`InteractionDataset::save`]:
//!
//! ```text
//! dataset.txt   PMLAM-DS v1
//!               users <n> items <m> interactions <nnz>
//!               one line per user: space-separated item indices
//! users.tsv     <index>\t<external id>
//! items.tsv     <index>\t<external id>
//! folds.txt     PMLAM-FOLDS v1
//!               seed <seed> folds 5
//!               one line per user: fold number of each item in row order
//! ```

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_RATING_THRESHOLD: f64 = 4.0;
pub const DEFAULT_MIN_USER: usize = 10;
pub const DEFAULT_MIN_ITEM: usize = 5;
pub const FOLD_COUNT: usize = 5;

const DS_MAGIC: &str = "PMLAM-DS v1";
const FOLD_MAGIC: &str = "PMLAM-FOLDS v1";

#[derive(Debug, Clone, PartialEq)]
pub struct RawRating {
    pub user: String,
    pub item: String,
    pub rating: f64,
    pub timestamp: Option<i64>,
}

/// Parse one delimited line. `None` for blank lines.
pub fn parse_line(line: &str, delim: char) -> std::result::Result<Option<RawRating>, String> {
    let line = line.trim_end_matches(['\r', '\n']);
    if line.trim().is_empty() {
        return Ok(None);
    }
    let fields: Vec<&str> = line.split(delim).map(str::trim).collect();
    if fields.len() < 3 || fields.len() > 4 {
        return Err(format!("expected 3 or 4 fields, found {}", fields.len()));
    }
    if fields[0].is_empty() || fields[1].is_empty() {
        return Err("empty user or item id".into());
    }
    let rating: f64 = fields[2]
        .parse()
        .map_err(|_| format!("rating `{}` is not a number", fields[2]))?;
    if !rating.is_finite() || !(1.0..=5.0).contains(&rating) {
        return Err(format!("rating {rating} outside [1, 5]"));
    }
    let timestamp = match fields.get(3) {
        Some(t) if !t.is_empty() => Some(
            t.parse::<f64>()
                .map_err(|_| format!("timestamp `{t}` is not a number"))? as i64,
        ),
        _ => None,
    };
    Ok(Some(RawRating {
        user: fields[0].to_string(),
        item: fields[1].to_string(),
        rating,
        timestamp,
    }))
}

fn detect_delimiter(line: &str) -> char {
    if line.contains('\t') {
        '\t'
    } else {
        ','
    }
}

/// Implicit (user, item) pairs with rating ≥ `threshold`, duplicates removed,
/// in order of first appearance.
pub fn ingest(path: &Path, threshold: f64) -> Result<Vec<(String, String)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(BufReader::new(file), path, threshold)
}

pub fn ingest_reader<R: BufRead>(reader: R, path: &Path, threshold: f64) -> Result<Vec<(String, String)>> {
    let mut delim = None;
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let d = *delim.get_or_insert_with(|| detect_delimiter(&line));
        let parsed = parse_line(&line, d).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        })?;
        let Some(r) = parsed else { continue };
        if r.rating >= threshold && seen.insert((r.user.clone(), r.item.clone())) {
            pairs.push((r.user, r.item));
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoPositives(threshold));
    }
    Ok(pairs)
}

/// Compressed sparse rows of sorted, unique column indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    pub indptr: Vec<usize>,
    pub indices: Vec<u32>,
    pub n_cols: usize,
}

impl Csr {
    pub fn from_rows(rows: &[Vec<u32>], n_cols: usize) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        indptr.push(0);
        let mut indices = Vec::with_capacity(rows.iter().map(Vec::len).sum());
        for r in rows {
            debug_assert!(r.windows(2).all(|w| w[0] < w[1]), "row not strictly increasing");
            indices.extend_from_slice(r);
            indptr.push(indices.len());
        }
        Csr { indptr, indices, n_cols }
    }

    pub fn n_rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.indices[self.indptr[r]..self.indptr[r + 1]]
    }

    pub fn contains(&self, r: usize, c: u32) -> bool {
        self.row(r).binary_search(&c).is_ok()
    }

    pub fn transpose(&self) -> Csr {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.indices {
            counts[c as usize + 1] += 1;
        }
        for k in 1..counts.len() {
            counts[k] += counts[k - 1];
        }
        let indptr = counts.clone();
        let mut fill = counts;
        let mut indices = vec![0u32; self.nnz()];
        for r in 0..self.n_rows() {
            for &c in self.row(r) {
                indices[fill[c as usize]] = r as u32;
                fill[c as usize] += 1;
            }
        }
        Csr {
            indptr,
            indices,
            n_cols: self.n_rows(),
        }
    }
}

/// Filtered binary interaction matrix with external id maps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionDataset {
    pub matrix: Csr,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
}

impl InteractionDataset {
    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn n_interactions(&self) -> usize {
        self.matrix.nnz()
    }

    pub fn density(&self) -> f64 {
        self.n_interactions() as f64 / (self.n_users() as f64 * self.n_items() as f64)
    }

    pub fn items_of(&self, user: usize) -> &[u32] {
        self.matrix.row(user)
    }

    /// (external user, external item) pairs in row order.
    pub fn pairs(&self) -> Vec<(String, String)> {
        (0..self.n_users())
            .flat_map(|u| {
                self.items_of(u)
                    .iter()
                    .map(move |&i| (self.user_ids[u].clone(), self.item_ids[i as usize].clone()))
            })
            .collect()
    }

    pub fn user_index(&self) -> HashMap<&str, usize> {
        self.user_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }

    pub fn item_index(&self) -> HashMap<&str, usize> {
        self.item_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }

    /// Build a dataset from pairs without filtering (ids in first-appearance order).
    pub fn from_pairs(pairs: &[(String, String)]) -> Self {
        filter_iterative(pairs, 1, 1).expect("nonempty pairs")
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut body = format!(
            "{DS_MAGIC}\nusers {} items {} interactions {}\n",
            self.n_users(),
            self.n_items(),
            self.n_interactions()
        );
        for u in 0..self.n_users() {
            let row: Vec<String> = self.items_of(u).iter().map(u32::to_string).collect();
            body.push_str(&row.join(" "));
            body.push('\n');
        }
        write_atomic(&dir.join("dataset.txt"), body.as_bytes())?;
        write_id_map(&dir.join("users.tsv"), &self.user_ids)?;
        write_id_map(&dir.join("items.tsv"), &self.item_ids)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("dataset.txt");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some(DS_MAGIC) {
            return Err(Error::format(&path, "dataset", format!("missing `{DS_MAGIC}` header")));
        }
        let header: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
        let count = |k: usize| -> Result<usize> {
            header
                .get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format(&path, "dataset", "bad size line"))
        };
        let (n_users, n_items, nnz) = (count(1)?, count(3)?, count(5)?);
        let mut rows = Vec::with_capacity(n_users);
        for line in lines.take(n_users) {
            let row: std::result::Result<Vec<u32>, _> = line.split_whitespace().map(str::parse).collect();
            let row = row.map_err(|_| Error::format(&path, "dataset", "bad item index"))?;
            if row.iter().any(|&i| i as usize >= n_items) || row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::format(&path, "dataset", "row indices out of range or unsorted"));
            }
            rows.push(row);
        }
        if rows.len() != n_users {
            return Err(Error::format(&path, "dataset", "truncated"));
        }
        let matrix = Csr::from_rows(&rows, n_items);
        if matrix.nnz() != nnz {
            return Err(Error::format(&path, "dataset", "interaction count mismatch"));
        }
        let user_ids = read_id_map(&dir.join("users.tsv"), n_users)?;
        let item_ids = read_id_map(&dir.join("items.tsv"), n_items)?;
        Ok(InteractionDataset {
            matrix,
            user_ids,
            item_ids,
        })
    }

    /// SHA-256 of the serialised matrix, used to key derived caches.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for u in 0..self.n_users() {
            for &i in self.items_of(u) {
                hasher.update(i.to_le_bytes());
            }
            hasher.update(u32::MAX.to_le_bytes());
        }
        for id in self.user_ids.iter().chain(&self.item_ids) {
            hasher.update(id.as_bytes());
            hasher.update([0u8]);
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn write_id_map(path: &Path, ids: &[String]) -> Result<()> {
    let mut body = String::new();
    for (i, id) in ids.iter().enumerate() {
        body.push_str(&format!("{i}\t{id}\n"));
    }
    write_atomic(path, body.as_bytes())
}

fn read_id_map(path: &Path, expected: usize) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ids = Vec::with_capacity(expected);
    for (n, line) in text.lines().enumerate() {
        let (idx, id) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(path, "id map", format!("line {}: expected two columns", n + 1)))?;
        if idx.parse::<usize>().ok() != Some(ids.len()) {
            return Err(Error::format(path, "id map", format!("line {}: index out of order", n + 1)));
        }
        ids.push(id.to_string());
    }
    if ids.len() != expected {
        return Err(Error::format(path, "id map", "entry count mismatch"));
    }
    Ok(ids)
}

/// Write to a temporary sibling and rename over the target.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp: PathBuf = {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".tmp");
        path.with_file_name(name)
    };
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Drop users with fewer than `min_user` items and items with fewer than
/// `min_item` users, repeatedly, until nothing changes. Surviving ids are
/// renumbered densely in first-appearance order.
pub fn filter_iterative(pairs: &[(String, String)], min_user: usize, min_item: usize) -> Result<InteractionDataset> {
    assert!(min_user >= 1 && min_item >= 1, "thresholds must be at least 1");
    let mut user_ids: Vec<&str> = Vec::new();
    let mut item_ids: Vec<&str> = Vec::new();
    let mut user_of: HashMap<&str, usize> = HashMap::new();
    let mut item_of: HashMap<&str, usize> = HashMap::new();
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(pairs.len());
    let mut seen = HashSet::with_capacity(pairs.len());
    for (u, i) in pairs {
        let ui = *user_of.entry(u.as_str()).or_insert_with(|| {
            user_ids.push(u.as_str());
            user_ids.len() - 1
        });
        let ii = *item_of.entry(i.as_str()).or_insert_with(|| {
            item_ids.push(i.as_str());
            item_ids.len() - 1
        });
        if seen.insert((ui, ii)) {
            edges.push((ui, ii));
        }
    }

    let mut user_alive = vec![true; user_ids.len()];
    let mut item_alive = vec![true; item_ids.len()];
    loop {
        let mut udeg = vec![0usize; user_ids.len()];
        let mut ideg = vec![0usize; item_ids.len()];
        for &(u, i) in &edges {
            if user_alive[u] && item_alive[i] {
                udeg[u] += 1;
                ideg[i] += 1;
            }
        }
        let mut changed = false;
        for (u, alive) in user_alive.iter_mut().enumerate() {
            if *alive && udeg[u] < min_user {
                *alive = false;
                changed = true;
            }
        }
        for (i, alive) in item_alive.iter_mut().enumerate() {
            if *alive && ideg[i] < min_item {
                *alive = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let remap = |alive: &[bool]| -> Vec<Option<u32>> {
        let mut next = 0u32;
        alive
            .iter()
            .map(|&a| {
                a.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    };
    let (umap, imap) = (remap(&user_alive), remap(&item_alive));
    let n_users = umap.iter().flatten().count();
    let n_items = imap.iter().flatten().count();
    if n_users == 0 || n_items == 0 {
        return Err(Error::EmptyAfterFilter);
    }
    let mut rows = vec![Vec::new(); n_users];
    for &(u, i) in &edges {
        if let (Some(nu), Some(ni)) = (umap[u], imap[i]) {
            rows[nu as usize].push(ni);
        }
    }
    rows.iter_mut().for_each(|r| r.sort_unstable());
    let keep = |ids: &[&str], alive: &[bool]| -> Vec<String> {
        ids.iter()
            .zip(alive)
            .filter(|(_, &a)| a)
            .map(|(s, _)| s.to_string())
            .collect()
    };
    Ok(InteractionDataset {
        matrix: Csr::from_rows(&rows, n_items),
        user_ids: keep(&user_ids, &user_alive),
        item_ids: keep(&item_ids, &item_alive),
    })
}

/// One cross-validation fold: per-user training set S_i and test set T_i.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub fold_count: usize,
    pub seed: u64,
    pub train: Csr,
    pub test: Csr,
}

impl FoldSplit {
    pub fn n_users(&self) -> usize {
        self.train.n_rows()
    }

    pub fn n_items(&self) -> usize {
        self.train.n_cols
    }

    /// All (user, item) training pairs in row order.
    pub fn train_pairs(&self) -> Vec<(u32, u32)> {
        (0..self.n_users())
            .flat_map(|u| self.train.row(u).iter().map(move |&i| (u as u32, i)))
            .collect()
    }
}

/// Fold number of every interaction, in the dataset's row order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub seed: u64,
    pub fold_of: Vec<Vec<u8>>,
}

/// Shuffle each user's items and deal them round-robin into five folds.
pub fn assign_folds(ds: &InteractionDataset, seed: u64) -> FoldAssignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fold_of = (0..ds.n_users())
        .map(|u| {
            let n = ds.items_of(u).len();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut folds = vec![0u8; n];
            for (pos, &k) in order.iter().enumerate() {
                folds[k] = (pos % FOLD_COUNT) as u8;
            }
            folds
        })
        .collect();
    FoldAssignment { seed, fold_of }
}

impl FoldAssignment {
    pub fn split(&self, ds: &InteractionDataset, fold: usize) -> FoldSplit {
        assert!(fold < FOLD_COUNT, "fold index out of range");
        let mut train = Vec::with_capacity(ds.n_users());
        let mut test = Vec::with_capacity(ds.n_users());
        for u in 0..ds.n_users() {
            let (mut tr, mut te) = (Vec::new(), Vec::new());
            for (&i, &f) in ds.items_of(u).iter().zip(&self.fold_of[u]) {
                if f as usize == fold {
                    te.push(i);
                } else {
                    tr.push(i);
                }
            }
            train.push(std::mem::take(&mut tr));
            test.push(std::mem::take(&mut te));
        }
        FoldSplit {
            fold_index: fold,
            fold_count: FOLD_COUNT,
            seed: self.seed,
            train: Csr::from_rows(&train, ds.n_items()),
            test: Csr::from_rows(&test, ds.n_items()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = format!("{FOLD_MAGIC}\nseed {} folds {FOLD_COUNT}\n", self.seed);
        for row in &self.fold_of {
            let cells: Vec<String> = row.iter().map(u8::to_string).collect();
            body.push_str(&cells.join(" "));
            body.push('\n');
        }
        write_atomic(path, body.as_bytes())
    }

    pub fn load(path: &Path, ds: &InteractionDataset) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some(FOLD_MAGIC) {
            return Err(Error::format(path, "folds", format!("missing `{FOLD_MAGIC}` header")));
        }
        let header: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
        let seed = header
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(path, "folds", "bad seed line"))?;
        let mut fold_of = Vec::with_capacity(ds.n_users());
        for (u, line) in lines.enumerate().take(ds.n_users()) {
            let row: std::result::Result<Vec<u8>, _> = line.split_whitespace().map(str::parse).collect();
            let row = row.map_err(|_| Error::format(path, "folds", "bad fold number"))?;
            if row.len() != ds.items_of(u).len() || row.iter().any(|&f| f as usize >= FOLD_COUNT) {
                return Err(Error::format(path, "folds", format!("row {u} does not match dataset")));
            }
            fold_of.push(row);
        }
        if fold_of.len() != ds.n_users() {
            return Err(Error::format(path, "folds", "truncated"));
        }
        Ok(FoldAssignment { seed, fold_of })
    }
}

/// All five folds of a dataset.
pub fn split_five_fold(ds: &InteractionDataset, seed: u64) -> Vec<FoldSplit> {
    let assignment = assign_folds(ds, seed);
    (0..FOLD_COUNT).map(|f| assignment.split(ds, f)).collect()
}

/// Item labels (e.g. genres) keyed by internal item index. File rows are
/// `<item external id>\t<label>[|<label>...]`.
pub fn load_labels(path: &Path, ds: &InteractionDataset) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let index = ds.item_index();
    let mut labels = vec![Vec::new(); ds.n_items()];
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, rest) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg: "expected `<item id>\\t<labels>`".into(),
        })?;
        if let Some(&i) = index.get(id.trim()) {
            labels[i] = rest
                .split('|')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
        }
    }
    Ok(labels)
}
