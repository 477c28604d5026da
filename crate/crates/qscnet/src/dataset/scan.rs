//! Dataset directory ingestion.
//!
//! Expected layout: `root/<song_id>/<fine_label>/<n>.wav`, 44.1 kHz stereo
//! throughout. Split membership comes from plain text lists (one song id
//! per line); the reserved `splits/` directory under the root is where the
//! toy generator keeps them. A song with any unreadable or off-format file
//! is excluded whole, with the reason recorded: partial songs would corrupt
//! stem sums silently. Unknown fine labels are kept (the vocabularies map
//! them to `others`) but reported so typos surface.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::SAMPLE_RATE;
use crate::dataset::taxonomy::stem_category;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// Song-id lists for the three splits.
#[derive(Debug, Clone, Default)]
pub struct SplitLists {
    pub train: BTreeSet<String>,
    pub valid: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl SplitLists {
    /// Read `train.txt`, `valid.txt`, `test.txt` from a directory; a
    /// missing file is an empty split.
    pub fn load_dir(dir: &Path) -> Result<SplitLists> {
        let read = |name: &str| -> Result<BTreeSet<String>> {
            let path = dir.join(name);
            if !path.exists() {
                return Ok(BTreeSet::new());
            }
            let text = fs::read_to_string(&path)?;
            Ok(text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect())
        };
        Ok(SplitLists { train: read("train.txt")?, valid: read("valid.txt")?, test: read("test.txt")? })
    }

    pub fn split_of(&self, song_id: &str) -> Option<Split> {
        if self.train.contains(song_id) {
            Some(Split::Train)
        } else if self.valid.contains(song_id) {
            Some(Split::Valid)
        } else if self.test.contains(song_id) {
            Some(Split::Test)
        } else {
            None
        }
    }

    pub fn listed(&self) -> impl Iterator<Item = (&String, Split)> {
        self.train
            .iter()
            .map(|s| (s, Split::Train))
            .chain(self.valid.iter().map(|s| (s, Split::Valid)))
            .chain(self.test.iter().map(|s| (s, Split::Test)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackFile {
    pub fine_label: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SongManifest {
    pub song_id: String,
    pub split: Split,
    /// (fine label, files) sorted by label, files in numeric-aware order.
    pub tracks: Vec<(String, Vec<PathBuf>)>,
}

impl SongManifest {
    pub fn fine_labels(&self) -> impl Iterator<Item = &str> {
        self.tracks.iter().map(|(l, _)| l.as_str())
    }

    pub fn file_count(&self) -> usize {
        self.tracks.iter().map(|(_, f)| f.len()).sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanReport {
    pub root: PathBuf,
    pub songs: Vec<SongManifest>,
    /// (song_id, reason) for every song dropped from `songs`.
    pub excluded: Vec<(String, String)>,
    /// (song_id, label) pairs outside the taxonomy; the songs are kept.
    pub unknown_labels: Vec<(String, String)>,
    /// Listed in a split file but not found on disk.
    pub missing: Vec<(String, Split)>,
}

impl ScanReport {
    pub fn songs_in(&self, split: Split) -> impl Iterator<Item = &SongManifest> {
        self.songs.iter().filter(move |m| m.split == split)
    }

    pub fn split_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for m in &self.songs {
            counts[m.split as usize] += 1;
        }
        counts
    }

    /// Anything a `--strict` scan should fail on.
    pub fn has_problems(&self) -> bool {
        !self.excluded.is_empty() || !self.unknown_labels.is_empty() || !self.missing.is_empty()
    }

    pub fn render(&self) -> String {
        let [tr, va, te] = self.split_counts();
        let mut out = format!(
            "{}: {} songs (train {tr} / valid {va} / test {te})\n",
            self.root.display(),
            self.songs.len()
        );
        for m in &self.songs {
            out.push_str(&format!(
                "  {} [{}] {} labels, {} files\n",
                m.song_id,
                m.split.as_str(),
                m.tracks.len(),
                m.file_count()
            ));
        }
        for (song, reason) in &self.excluded {
            out.push_str(&format!("  excluded {song}: {reason}\n"));
        }
        for (song, label) in &self.unknown_labels {
            out.push_str(&format!("  warning {song}: label {label:?} not in taxonomy (mapped to others)\n"));
        }
        for (song, split) in &self.missing {
            out.push_str(&format!("  missing {song}: listed in {} but absent\n", split.as_str()));
        }
        out
    }
}

/// Directory name under the root reserved for split lists.
pub const SPLITS_DIR: &str = "splits";

/// Cheap per-file validation: openable, stereo, 44.1 kHz, non-empty.
fn check_wav(path: &Path) -> std::result::Result<(), String> {
    let reader = match hound::WavReader::open(path) {
        Ok(r) => r,
        Err(e) => return Err(format!("{}: {e}", path.display())),
    };
    let spec = reader.spec();
    if spec.channels != 2 {
        return Err(format!("{}: {} channel(s), need stereo", path.display(), spec.channels));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(format!("{}: {} Hz, need {}", path.display(), spec.sample_rate, SAMPLE_RATE));
    }
    if reader.len() == 0 {
        return Err(format!("{}: empty audio", path.display()));
    }
    Ok(())
}

/// `1.wav, 2.wav, 10.wav` should order numerically, arbitrary names fall
/// back to lexicographic.
fn file_order_key(path: &Path) -> (u64, String) {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    match stem.parse::<u64>() {
        Ok(n) => (n, String::new()),
        Err(_) => (u64::MAX, stem.to_string()),
    }
}

/// Walk the dataset root and build per-song manifests. With `splits`,
/// unlisted songs are excluded and absent listed songs reported; without,
/// every song lands in `train`.
pub fn scan_dataset(root: &Path, splits: Option<&SplitLists>) -> Result<ScanReport> {
    let mut report = ScanReport {
        root: root.to_path_buf(),
        songs: vec![],
        excluded: vec![],
        unknown_labels: vec![],
        missing: vec![],
    };
    if !root.is_dir() {
        return Err(crate::Error::Data(format!("{}: not a directory", root.display())));
    }

    let mut song_dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .filter(|p| p.file_name().map(|n| n != SPLITS_DIR).unwrap_or(true))
        .collect();
    song_dirs.sort();

    let mut seen: BTreeSet<String> = BTreeSet::new();
    for song_dir in song_dirs {
        let song_id = song_dir.file_name().unwrap().to_string_lossy().into_owned();
        seen.insert(song_id.clone());
        let split = match splits {
            Some(lists) => match lists.split_of(&song_id) {
                Some(s) => s,
                None => {
                    report.excluded.push((song_id, "not in any split list".into()));
                    continue;
                }
            },
            None => Split::Train,
        };

        let mut label_dirs: Vec<PathBuf> = fs::read_dir(&song_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        label_dirs.sort();

        let mut tracks: Vec<(String, Vec<PathBuf>)> = vec![];
        let mut fatal: Option<String> = None;
        for label_dir in label_dirs {
            let label = label_dir.file_name().unwrap().to_string_lossy().into_owned();
            if stem_category(&label).is_none() {
                report.unknown_labels.push((song_id.clone(), label.clone()));
            }
            let mut files: Vec<PathBuf> = fs::read_dir(&label_dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().map(|e| e == "wav").unwrap_or(false))
                .collect();
            files.sort_by_key(|p| file_order_key(p));
            for f in &files {
                if let Err(reason) = check_wav(f) {
                    fatal = Some(reason);
                    break;
                }
            }
            if fatal.is_some() {
                break;
            }
            if !files.is_empty() {
                tracks.push((label, files));
            }
        }

        if let Some(reason) = fatal {
            report.unknown_labels.retain(|(s, _)| s != &song_id);
            report.excluded.push((song_id, reason));
            continue;
        }
        if tracks.is_empty() {
            report.excluded.push((song_id, "no audio tracks".into()));
            continue;
        }
        report.songs.push(SongManifest { song_id, split, tracks });
    }

    if let Some(lists) = splits {
        for (song, split) in lists.listed() {
            if !seen.contains(song) {
                report.missing.push((song.clone(), split));
            }
        }
    }
    Ok(report)
}
