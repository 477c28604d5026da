//! Per-song stem assembly under a vocabulary.
//!
//! Each vocabulary category's track is the sample-wise sum of its member
//! files, zero-padded to the song's longest track. Accumulation order is
//! fixed (vocabulary order, labels sorted within a category, files in
//! manifest order) and the song mixture is defined as the stem sum in that
//! same nested order, so mixture construction is reproducible to the bit.
//! A category with no member tracks stays absent rather than becoming a
//! zero track; evaluation treats absence and silence differently.

use std::collections::HashMap;

use crate::audio::{read_wav, Waveform};
use crate::dataset::scan::{ScanReport, SongManifest, Split};
use crate::dataset::taxonomy::Vocabulary;
use crate::error::Result;

/// One song's stems, indexed by vocabulary category position.
#[derive(Debug, Clone)]
pub struct SongStems {
    pub song_id: String,
    pub stems: Vec<Option<Waveform>>,
    pub len: usize,
}

impl SongStems {
    /// Sum of present stems in vocabulary order.
    pub fn mixture(&self) -> Waveform {
        let mut mix = Waveform::zeros(self.len);
        for stem in self.stems.iter().flatten() {
            mix.add_scaled(stem, 1.0).expect("stem lengths are equalized at build time");
        }
        mix
    }

    pub fn present(&self) -> impl Iterator<Item = (usize, &Waveform)> {
        self.stems.iter().enumerate().filter_map(|(i, s)| s.as_ref().map(|w| (i, w)))
    }
}

/// Decode a manifest and gather its tracks into vocabulary stems.
pub fn build_stem_tracks(manifest: &SongManifest, vocab: &Vocabulary) -> Result<SongStems> {
    // tracks arrive label-sorted from the scanner; group them by category
    // in vocabulary order so accumulation order is fully determined
    let mut members: Vec<Vec<&std::path::PathBuf>> = vec![vec![]; vocab.len()];
    for (label, files) in &manifest.tracks {
        let idx = vocab.category_index_for(label);
        members[idx].extend(files.iter());
    }

    let mut decoded: Vec<Vec<Waveform>> = Vec::with_capacity(vocab.len());
    let mut max_len = 0;
    for files in &members {
        let mut ws = Vec::with_capacity(files.len());
        for path in files {
            let w = read_wav(path)?;
            max_len = max_len.max(w.len());
            ws.push(w);
        }
        decoded.push(ws);
    }

    let mut stems: Vec<Option<Waveform>> = Vec::with_capacity(vocab.len());
    for ws in decoded {
        if ws.is_empty() {
            stems.push(None);
            continue;
        }
        let mut sum = Waveform::zeros(max_len);
        for w in &ws {
            sum.add_scaled(&w.resized(max_len), 1.0)?;
        }
        stems.push(Some(sum));
    }
    Ok(SongStems { song_id: manifest.song_id.clone(), stems, len: max_len })
}

/// Decoded stems for one dataset split, held in memory. Source material is
/// read once here; pools and the sampler only slice it.
pub struct StemStore {
    pub vocab: Vocabulary,
    pub songs: Vec<SongStems>,
    by_id: HashMap<String, usize>,
}

impl StemStore {
    pub fn load(report: &ScanReport, split: Split, vocab: &Vocabulary) -> Result<StemStore> {
        let mut songs = vec![];
        for manifest in report.songs_in(split) {
            songs.push(build_stem_tracks(manifest, vocab)?);
        }
        let by_id = songs.iter().enumerate().map(|(i, s)| (s.song_id.clone(), i)).collect();
        Ok(StemStore { vocab: vocab.clone(), songs, by_id })
    }

    pub fn from_songs(vocab: Vocabulary, songs: Vec<SongStems>) -> StemStore {
        let by_id = songs.iter().enumerate().map(|(i, s)| (s.song_id.clone(), i)).collect();
        StemStore { vocab, songs, by_id }
    }

    pub fn index_of(&self, song_id: &str) -> Option<usize> {
        self.by_id.get(song_id).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.songs.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{write_wav, WavEncoding};
    use crate::dataset::scan::scan_dataset;
    use tempfile::tempdir;

    fn wave(n: usize, f: impl Fn(usize) -> f32) -> Waveform {
        let l: Vec<f32> = (0..n).map(&f).collect();
        let r: Vec<f32> = (0..n).map(|i| f(i) * 0.5).collect();
        Waveform::new(l, r).unwrap()
    }

    fn fixture(labels: &[(&str, usize, f32)]) -> (tempfile::TempDir, ScanReport) {
        let dir = tempdir().unwrap();
        for (label, len, amp) in labels {
            let d = dir.path().join("song").join(label);
            std::fs::create_dir_all(&d).unwrap();
            let w = wave(*len, |i| amp * ((i % 17) as f32 / 17.0 - 0.4));
            write_wav(&d.join("1.wav"), &w, WavEncoding::Float32).unwrap();
        }
        let report = scan_dataset(dir.path(), None).unwrap();
        (dir, report)
    }

    #[test]
    fn sibling_labels_collapse_under_the_coarse_vocabulary() {
        let (_dir, report) = fixture(&[
            ("acoustic_guitar", 300, 0.3),
            ("distorted_electric_guitar", 300, 0.2),
            ("kick_drum", 300, 0.5),
            ("violin", 300, 0.1),
        ]);
        let vocab = Vocabulary::coarse6();
        let stems = build_stem_tracks(&report.songs[0], &vocab).unwrap();

        let guitar = stems.stems[vocab.index_of("guitar").unwrap()].as_ref().unwrap();
        let acoustic = read_wav(&report.songs[0].tracks[0].1[0]).unwrap();
        let distorted = read_wav(&report.songs[0].tracks[1].1[0]).unwrap();
        for c in 0..2 {
            for i in 0..300 {
                assert_eq!(guitar.channel(c)[i], acoustic.channel(c)[i] + distorted.channel(c)[i]);
            }
        }
        assert!(stems.stems[vocab.index_of("vocals").unwrap()].is_none());
        assert!(stems.stems[vocab.index_of("drums").unwrap()].is_some());
        // violin has nowhere else to go
        let others = stems.stems[vocab.index_of("others").unwrap()].as_ref().unwrap();
        let violin = read_wav(&report.songs[0].tracks[3].1[0]).unwrap();
        assert_eq!(others.channel(0), violin.channel(0));
    }

    #[test]
    fn fine_vocabulary_keeps_guitars_apart() {
        let (_dir, report) = fixture(&[
            ("acoustic_guitar", 200, 0.3),
            ("distorted_electric_guitar", 200, 0.2),
        ]);
        let vocab = Vocabulary::fine10();
        let stems = build_stem_tracks(&report.songs[0], &vocab).unwrap();
        let a = stems.stems[vocab.index_of("acoustic_guitar").unwrap()].as_ref().unwrap();
        let d = stems.stems[vocab.index_of("distorted_electric_guitar").unwrap()].as_ref().unwrap();
        let raw_a = read_wav(&report.songs[0].tracks[0].1[0]).unwrap();
        let raw_d = read_wav(&report.songs[0].tracks[1].1[0]).unwrap();
        assert_eq!(a.channel(0), raw_a.channel(0));
        assert_eq!(d.channel(0), raw_d.channel(0));
    }

    #[test]
    fn shorter_tracks_are_zero_padded() {
        let (_dir, report) = fixture(&[("cello", 100, 0.2), ("flutes", 250, 0.4)]);
        let vocab = Vocabulary::coarse6();
        let stems = build_stem_tracks(&report.songs[0], &vocab).unwrap();
        assert_eq!(stems.len, 250);
        let others = stems.stems[vocab.index_of("others").unwrap()].as_ref().unwrap();
        assert_eq!(others.len(), 250);
        let cello = read_wav(&report.songs[0].tracks[0].1[0]).unwrap();
        let flutes = read_wav(&report.songs[0].tracks[1].1[0]).unwrap();
        assert_eq!(others.channel(0)[40], cello.channel(0)[40] + flutes.channel(0)[40]);
        // beyond cello's end only the flutes remain
        assert_eq!(others.channel(0)[200], flutes.channel(0)[200]);
    }

    #[test]
    fn multiple_files_in_one_label_sum() {
        let dir = tempdir().unwrap();
        let d = dir.path().join("song/toms");
        std::fs::create_dir_all(&d).unwrap();
        let w1 = wave(120, |i| (i as f32 * 0.03).sin() * 0.4);
        let w2 = wave(120, |i| (i as f32 * 0.05).cos() * 0.3);
        write_wav(&d.join("1.wav"), &w1, WavEncoding::Float32).unwrap();
        write_wav(&d.join("2.wav"), &w2, WavEncoding::Float32).unwrap();
        let report = scan_dataset(dir.path(), None).unwrap();
        let vocab = Vocabulary::coarse6();
        let stems = build_stem_tracks(&report.songs[0], &vocab).unwrap();
        let drums = stems.stems[vocab.index_of("drums").unwrap()].as_ref().unwrap();
        for i in 0..120 {
            assert_eq!(drums.channel(0)[i], w1.channel(0)[i] + w2.channel(0)[i]);
        }
    }

    #[test]
    fn mixture_matches_nested_order_oracle_exactly() {
        let (_dir, report) = fixture(&[
            ("bass_guitar", 180, 0.37),
            ("kick_drum", 180, 0.21),
            ("lead_female_singer", 180, 0.44),
            ("synth_pad", 180, 0.13),
        ]);
        let vocab = Vocabulary::coarse6();
        let stems = build_stem_tracks(&report.songs[0], &vocab).unwrap();
        let mix = stems.mixture();

        // independent scalar accumulation in the declared order:
        // vocabulary categories outermost, each stem already the sum of its
        // label-sorted members
        for c in 0..2 {
            for i in 0..180 {
                let mut acc = 0f32;
                for stem in stems.stems.iter().flatten() {
                    acc += stem.channel(c)[i];
                }
                assert_eq!(mix.channel(c)[i].to_bits(), acc.to_bits());
            }
        }

        // and against an order-free f64 oracle over the raw files
        let mut raw = vec![0f64; 180];
        for (_, files) in &report.songs[0].tracks {
            for f in files {
                let w = read_wav(f).unwrap();
                for i in 0..180 {
                    raw[i] += w.channel(0)[i] as f64;
                }
            }
        }
        for i in 0..180 {
            assert!((mix.channel(0)[i] as f64 - raw[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn store_loads_split_and_resolves_ids() {
        let (_dir, report) = fixture(&[("organ", 90, 0.2)]);
        let vocab = Vocabulary::coarse6();
        let store = StemStore::load(&report, Split::Train, &vocab).unwrap();
        assert_eq!(store.songs.len(), 1);
        assert_eq!(store.index_of("song"), Some(0));
        assert_eq!(store.index_of("nope"), None);
        let empty = StemStore::load(&report, Split::Test, &vocab).unwrap();
        assert!(empty.is_empty());
    }
}
