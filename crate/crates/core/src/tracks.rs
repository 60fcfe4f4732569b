//! Feature-track bookkeeping aligned with the pose trail.
//!
//! Frames are numbered by ingestion order. After frame `k` is ingested, the
//! observation from frame `f` belongs to trail slot `k − f`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub frame: usize,
    pub u: f64,
    pub v: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureTrack {
    pub feature_id: u64,
    /// Oldest first; frame indices are consecutive.
    pub observations: Vec<Observation>,
    /// Trail slot of the first observation at the time the track was emitted.
    pub anchor_slot: usize,
}

impl FeatureTrack {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Trail slot of every observation, oldest first, given the newest frame.
    pub fn slots(&self, current_frame: usize) -> Vec<usize> {
        self.observations
            .iter()
            .map(|o| current_frame - o.frame)
            .collect()
    }
}

/// One record of a track file: the frame time and the `(feature_id, u, v)`
/// observations in raw pixels. An empty list is an occluded frame.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    pub t: f64,
    pub obs: Vec<(u64, f64, f64)>,
}

/// Per-frame outcome of [`TrackManager::ingest_frame`], as sorted id lists.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IngestSummary {
    pub continued: Vec<u64>,
    pub new: Vec<u64>,
    pub terminated: Vec<u64>,
}

#[derive(Clone, Debug)]
pub struct TrackManager {
    n_a: usize,
    m_min: usize,
    width: f64,
    height: f64,
    frame: Option<usize>,
    last_time: Option<f64>,
    live: BTreeMap<u64, Vec<Observation>>,
    terminated: BTreeMap<u64, Vec<Observation>>,
    dropped_out_of_bounds: usize,
    dropped_duplicates: usize,
}

impl TrackManager {
    pub fn new(n_a: usize, m_min: usize, width: u32, height: u32) -> Result<Self> {
        if n_a < 2 || m_min < 2 || m_min > n_a {
            return Err(Error::InvalidInput(format!(
                "need 2 ≤ m_min ≤ n_a, got m_min = {m_min}, n_a = {n_a}"
            )));
        }
        Ok(Self {
            n_a,
            m_min,
            width: width as f64,
            height: height as f64,
            frame: None,
            last_time: None,
            live: BTreeMap::new(),
            terminated: BTreeMap::new(),
            dropped_out_of_bounds: 0,
            dropped_duplicates: 0,
        })
    }

    /// Index of the newest ingested frame.
    pub fn current_frame(&self) -> Option<usize> {
        self.frame
    }

    pub fn dropped_out_of_bounds(&self) -> usize {
        self.dropped_out_of_bounds
    }

    pub fn dropped_duplicates(&self) -> usize {
        self.dropped_duplicates
    }

    pub fn live_count(&self) -> usize {
        self.live.len()
    }

    fn in_bounds(&self, u: f64, v: f64) -> bool {
        u.is_finite() && v.is_finite() && u >= 0.0 && v >= 0.0 && u < self.width && v < self.height
    }

    /// Extends live tracks by id, opens tracks for new ids and terminates
    /// live tracks that were not observed. Terminated tracks are held until
    /// the next [`ready_tracks`](Self::ready_tracks) call.
    pub fn ingest_frame(
        &mut self,
        observations: &[(u64, f64, f64)],
        t: f64,
    ) -> Result<IngestSummary> {
        if !t.is_finite() {
            return Err(Error::InvalidInput("non-finite frame time".into()));
        }
        if let Some(last) = self.last_time {
            if t < last {
                return Err(Error::Stream(format!("frame time {t} precedes {last}")));
            }
        }
        self.last_time = Some(t);
        let frame = self.frame.map_or(0, |f| f + 1);
        self.frame = Some(frame);

        let mut seen = BTreeSet::new();
        let mut summary = IngestSummary::default();
        for &(id, u, v) in observations {
            if !self.in_bounds(u, v) {
                self.dropped_out_of_bounds += 1;
                continue;
            }
            if !seen.insert(id) {
                self.dropped_duplicates += 1;
                continue;
            }
            let obs = Observation { frame, u, v };
            match self.live.get_mut(&id) {
                Some(track) => {
                    track.push(obs);
                    summary.continued.push(id);
                }
                None => {
                    self.live.insert(id, vec![obs]);
                    summary.new.push(id);
                }
            }
        }
        let lost: Vec<u64> = self
            .live
            .keys()
            .filter(|id| !seen.contains(id))
            .copied()
            .collect();
        for id in lost {
            let track = self.live.remove(&id).expect("live id");
            self.terminated.insert(id, track);
            summary.terminated.push(id);
        }
        // keep only observations that still map to trail slots
        let oldest = (frame + 1).saturating_sub(self.n_a);
        for track in self.live.values_mut().chain(self.terminated.values_mut()) {
            track.retain(|o| o.frame >= oldest);
        }
        self.terminated.retain(|_, t| !t.is_empty());
        summary.continued.sort_unstable();
        summary.new.sort_unstable();
        Ok(summary)
    }

    /// Terminated tracks and live tracks that fill the whole trail, each with
    /// at least `m_min` observations, in ascending id order.
    ///
    /// Returned tracks are consumed: a full live track restarts empty, so no
    /// observation is used twice. Terminated tracks that are too short are
    /// discarded.
    pub fn ready_tracks(&mut self) -> Vec<FeatureTrack> {
        let Some(frame) = self.frame else {
            return Vec::new();
        };
        let mut out: BTreeMap<u64, Vec<Observation>> = std::mem::take(&mut self.terminated)
            .into_iter()
            .filter(|(_, t)| t.len() >= self.m_min)
            .collect();
        let full: Vec<u64> = self
            .live
            .iter()
            .filter(|(_, t)| t.len() >= self.n_a)
            .map(|(id, _)| *id)
            .collect();
        for id in full {
            let track = self.live.remove(&id).expect("live id");
            out.insert(id, track);
        }
        out.into_iter()
            .map(|(feature_id, observations)| FeatureTrack {
                feature_id,
                anchor_slot: frame - observations[0].frame,
                observations,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manager() -> TrackManager {
        TrackManager::new(4, 3, 640, 480).unwrap()
    }

    #[test]
    fn empty_frame_terminates_everything() {
        let mut m = manager();
        m.ingest_frame(&[(1, 10.0, 10.0), (2, 20.0, 20.0)], 0.0)
            .unwrap();
        let s = m.ingest_frame(&[], 0.1).unwrap();
        assert_eq!(s.terminated, vec![1, 2]);
        assert_eq!(m.live_count(), 0);
    }

    #[test]
    fn repeated_ids_extend_tracks() {
        let mut m = manager();
        let obs = [(5, 1.0, 1.0), (7, 2.0, 2.0)];
        m.ingest_frame(&obs, 0.0).unwrap();
        let s = m.ingest_frame(&obs, 0.1).unwrap();
        assert_eq!(s.continued, vec![5, 7]);
        assert!(m.live.values().all(|t| t.len() == 2));
    }

    #[test]
    fn gap_splits_track() {
        let mut m = TrackManager::new(4, 2, 640, 480).unwrap();
        m.ingest_frame(&[(1, 1.0, 1.0)], 0.0).unwrap();
        m.ingest_frame(&[(1, 1.0, 1.0)], 0.1).unwrap();
        m.ingest_frame(&[], 0.2).unwrap();
        let first = m.ready_tracks();
        assert_eq!(first.len(), 1);
        let s = m.ingest_frame(&[(1, 1.0, 1.0)], 0.3).unwrap();
        assert_eq!(s.new, vec![1]);
        assert_eq!(m.live[&1].len(), 1);
    }

    #[test]
    fn short_tracks_are_not_ready() {
        let mut m = manager();
        m.ingest_frame(&[(1, 1.0, 1.0), (2, 1.0, 1.0)], 0.0)
            .unwrap();
        m.ingest_frame(&[(1, 1.0, 1.0)], 0.1).unwrap();
        m.ingest_frame(&[], 0.2).unwrap();
        assert!(m.ready_tracks().is_empty());
    }

    #[test]
    fn full_track_is_ready_while_live() {
        let mut m = manager();
        for k in 0..4 {
            m.ingest_frame(&[(9, 1.0, 1.0)], k as f64).unwrap();
        }
        let ready = m.ready_tracks();
        assert_eq!(ready.len(), 1);
        assert_eq!(ready[0].len(), 4);
        assert_eq!(ready[0].anchor_slot, 3);
        assert_eq!(ready[0].slots(3), vec![3, 2, 1, 0]);
        // consumed: the next sighting starts a fresh track
        let s = m.ingest_frame(&[(9, 1.0, 1.0)], 4.0).unwrap();
        assert_eq!(s.new, vec![9]);
    }

    #[test]
    fn ready_order_is_ascending_id() {
        let mut m = manager();
        let obs = [(30, 1.0, 1.0), (4, 1.0, 1.0), (17, 1.0, 1.0)];
        for k in 0..3 {
            m.ingest_frame(&obs, k as f64).unwrap();
        }
        m.ingest_frame(&[], 3.0).unwrap();
        let ids: Vec<u64> = m.ready_tracks().iter().map(|t| t.feature_id).collect();
        assert_eq!(ids, vec![4, 17, 30]);
    }

    #[test]
    fn out_of_bounds_pixels_are_counted() {
        let mut m = manager();
        m.ingest_frame(
            &[
                (1, -1.0, 5.0),
                (2, 640.0, 5.0),
                (3, 5.0, f64::NAN),
                (4, 5.0, 5.0),
            ],
            0.0,
        )
        .unwrap();
        assert_eq!(m.dropped_out_of_bounds(), 3);
        assert_eq!(m.live_count(), 1);
    }

    #[test]
    fn time_must_not_decrease() {
        let mut m = manager();
        m.ingest_frame(&[], 1.0).unwrap();
        assert!(matches!(m.ingest_frame(&[], 0.5), Err(Error::Stream(_))));
    }

    #[test]
    fn rejects_bad_limits() {
        assert!(TrackManager::new(3, 4, 10, 10).is_err());
        assert!(TrackManager::new(1, 1, 10, 10).is_err());
    }

    proptest::proptest! {
        #[test]
        fn tracks_never_exceed_trail(frames in proptest::collection::vec(proptest::collection::vec(0u64..6, 0..6), 1..30)) {
            let mut m = manager();
            let mut replay = manager();
            for (k, ids) in frames.iter().enumerate() {
                let obs: Vec<(u64, f64, f64)> = ids.iter().map(|&i| (i, 1.0, 1.0)).collect();
                let a = m.ingest_frame(&obs, k as f64).unwrap();
                let b = replay.ingest_frame(&obs, k as f64).unwrap();
                proptest::prop_assert_eq!(a, b);
                for t in m.live.values() {
                    proptest::prop_assert!(t.len() <= 4);
                }
                let ready = m.ready_tracks();
                proptest::prop_assert_eq!(&ready, &replay.ready_tracks());
                for t in &ready {
                    proptest::prop_assert!(t.len() >= 3 && t.len() <= 4);
                    proptest::prop_assert!(t.slots(k).iter().all(|s| *s < 4));
                    proptest::prop_assert!(t.observations.windows(2).all(|w| w[1].frame == w[0].frame + 1));
                }
            }
        }
    }
}
