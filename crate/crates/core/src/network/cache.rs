use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use super::Router;
use crate::domain::{CellId, Grid};
use crate::error::{Error, Result};
use crate::geo::LatLon;
use crate::time::{self, CACHE_BIN_MINUTES, MINUTES_PER_WEEK};

pub const CACHE_BINS: usize = (MINUTES_PER_WEEK / CACHE_BIN_MINUTES) as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey {
    pub src: CellId,
    pub dst: CellId,
    pub bin: u16,
}

/// Shared map from (cell pair, weekly 30-minute bin) to seconds.
#[derive(Debug, Default)]
pub struct TravelTimeCache {
    map: RwLock<HashMap<CacheKey, f64>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl TravelTimeCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &CacheKey) -> Option<f64> {
        let v = self.map.read().expect("cache lock").get(key).copied();
        let counter = if v.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        v
    }

    pub fn insert(&self, key: CacheKey, seconds: f64) -> Result<()> {
        if !(seconds >= 0.0) || usize::from(key.bin) >= CACHE_BINS {
            return Err(Error::Integrity(format!("bad cache entry {key:?} = {seconds}")));
        }
        self.map.write().expect("cache lock").insert(key, seconds);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    /// Writes `src_grid,dst_grid,bin,seconds` rows sorted by key.
    pub fn save(&self, path: &Path) -> Result<()> {
        let map = self.map.read().expect("cache lock");
        let mut keys: Vec<_> = map.keys().copied().collect();
        keys.sort();
        let mut out = String::from("src_grid,dst_grid,bin,seconds\n");
        for k in keys {
            out.push_str(&format!("{},{},{},{}\n", k.src, k.dst, k.bin, map[&k]));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let cache = TravelTimeCache::new();
        for rec in reader.deserialize::<(CellId, CellId, u16, f64)>() {
            let (src, dst, bin, seconds) = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            cache.insert(CacheKey { src, dst, bin }, seconds)?;
        }
        Ok(cache)
    }
}

/// Cell-to-cell travel times: centroids snap to their nearest graph node and
/// each (pair, bin) is routed once at the bin's start time.
#[derive(Debug)]
pub struct TravelTimes {
    router: Router,
    grid: Arc<Grid>,
    cell_nodes: Vec<usize>,
    cache: TravelTimeCache,
}

impl TravelTimes {
    pub fn new(router: Router, grid: Arc<Grid>) -> Self {
        Self::with_cache(router, grid, TravelTimeCache::new())
    }

    pub fn with_cache(router: Router, grid: Arc<Grid>, cache: TravelTimeCache) -> Self {
        let cell_nodes = grid
            .cells()
            .iter()
            .map(|c| router.graph().nearest_node(&c.centroid))
            .collect();
        TravelTimes {
            router,
            grid,
            cell_nodes,
            cache,
        }
    }

    pub fn router(&self) -> &Router {
        &self.router
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn cache(&self) -> &TravelTimeCache {
        &self.cache
    }

    pub fn key(&self, src: CellId, dst: CellId, t: f64) -> CacheKey {
        CacheKey {
            src,
            dst,
            bin: time::weekly_bin(t, CACHE_BIN_MINUTES) as u16,
        }
    }

    /// What a fresh router call returns for `key`, bypassing the cache.
    pub fn compute(&self, key: &CacheKey, t: f64) -> Result<f64> {
        if key.src == key.dst {
            return Ok(0.0);
        }
        let depart = time::bin_start(t, CACHE_BIN_MINUTES);
        let (a, b) = (self.cell_nodes[key.src as usize], self.cell_nodes[key.dst as usize]);
        Ok(self.router.route(a, b, depart)?.travel_time_s)
    }

    pub fn between_cells(&self, src: CellId, dst: CellId, t: f64) -> Result<f64> {
        let key = self.key(src, dst, t);
        if let Some(v) = self.cache.get(&key) {
            return Ok(v);
        }
        let v = self.compute(&key, t)?;
        self.cache.insert(key, v)?;
        Ok(v)
    }

    pub fn travel_time(&self, src: &LatLon, dst: &LatLon, t: f64) -> Result<f64> {
        self.between_cells(self.grid.grid_of(src)?, self.grid.grid_of(dst)?, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::build_grid;
    use crate::geo::BoundingBox;
    use crate::network::{select_landmarks, Node, RoadGraph};
    use crate::speed::{SpeedModel, SpeedProfiles};
    use crate::time::{parse_timestamp, HOUR};

    /// Three nodes in a row, 1.6 km apart, edges both ways. Speeds are 30 mph
    /// from Monday 08:00 to 08:30 and 60 mph otherwise.
    fn setup() -> (TravelTimes, LatLon, LatLon, LatLon) {
        let bbox = BoundingBox::from_extent(LatLon::new(36.0, -86.0), 3.0 * 1609.344, 1609.344).unwrap();
        let grid = build_grid(bbox, 1609.344).unwrap();
        let proj = *grid.projection();
        let at = |x: f64| proj.to_latlon(x, 804.672);
        let pts = [at(804.672), at(804.672 + 1609.344), at(804.672 + 3218.688)];
        let nodes = pts
            .iter()
            .enumerate()
            .map(|(i, p)| Node {
                id: i as u64,
                location: *p,
            })
            .collect();
        let edges = [
            (0, 1, 1600.0, 1, 60.0, 0),
            (1, 0, 1600.0, 1, 60.0, 1),
            (1, 2, 1600.0, 1, 60.0, 2),
            (2, 1, 1600.0, 1, 60.0, 3),
        ];
        let g = RoadGraph::new(nodes, &edges).unwrap();
        let speeds = SpeedProfiles::from_fn(&g, 30, |_, ff, off| if off == 8.0 * HOUR { 30.0 } else { ff }).unwrap();
        let lm = select_landmarks(&g, 2, 0).unwrap();
        let router = Router::new(Arc::new(g), Arc::new(lm), Arc::new(speeds) as Arc<dyn SpeedModel>).unwrap();
        let tt = TravelTimes::new(router, Arc::new(grid));
        (tt, pts[0], pts[1], pts[2])
    }

    #[test]
    fn repeated_query_hits_cache() {
        let (tt, a, _, c) = setup();
        let t = parse_timestamp("2017-02-07T10:00:00Z").unwrap();
        let first = tt.travel_time(&a, &c, t).unwrap();
        assert_eq!(tt.cache().misses(), 1);
        let second = tt.travel_time(&a, &c, t).unwrap();
        assert_eq!(tt.cache().hits(), 1);
        assert_eq!(first, second);
    }

    #[test]
    fn same_bin_same_value_and_same_cell_zero() {
        let (tt, a, b, _) = setup();
        let t = parse_timestamp("2017-02-07T10:00:00Z").unwrap();
        assert_eq!(
            tt.travel_time(&a, &b, t).unwrap(),
            tt.travel_time(&a, &b, t + 29.0 * 60.0).unwrap()
        );
        assert_eq!(tt.travel_time(&a, &a, t).unwrap(), 0.0);
    }

    #[test]
    fn bins_with_different_speeds_differ() {
        let (tt, a, _, c) = setup();
        let slow = parse_timestamp("2017-02-06T08:10:00Z").unwrap();
        let fast = parse_timestamp("2017-02-06T08:40:00Z").unwrap();
        let mps = |mph: f64| mph * 0.44704;
        assert!((tt.travel_time(&a, &c, slow).unwrap() - 3200.0 / mps(30.0)).abs() < 1e-9);
        assert!((tt.travel_time(&a, &c, fast).unwrap() - 3200.0 / mps(60.0)).abs() < 1e-9);
    }

    #[test]
    fn entries_equal_fresh_computation() {
        let (tt, a, b, c) = setup();
        let t = parse_timestamp("2017-02-06T08:10:00Z").unwrap();
        for (p, q) in [(a, b), (b, c), (c, a)] {
            let v = tt.travel_time(&p, &q, t).unwrap();
            let key = tt.key(tt.grid().grid_of(&p).unwrap(), tt.grid().grid_of(&q).unwrap(), t);
            assert_eq!(tt.compute(&key, t).unwrap(), v);
        }
    }

    #[test]
    fn persisted_cache_round_trips() {
        let (tt, a, _, c) = setup();
        let t = parse_timestamp("2017-02-06T08:10:00Z").unwrap();
        tt.travel_time(&a, &c, t).unwrap();
        tt.travel_time(&c, &a, t + HOUR).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.csv");
        tt.cache().save(&path).unwrap();
        let back = TravelTimeCache::load(&path).unwrap();
        assert_eq!(back.len(), 2);
        let key = tt.key(0, 2, t);
        assert_eq!(back.get(&key), tt.cache().get(&key));
        assert!(back
            .insert(
                CacheKey {
                    src: 0,
                    dst: 1,
                    bin: 336
                },
                1.0
            )
            .is_err());
    }
}
