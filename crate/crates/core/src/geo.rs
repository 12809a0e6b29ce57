//! Analysis grid, planning areas and the cell-to-area index.
//!
//! Positions are binned with an equirectangular projection anchored at the
//! grid origin (south-west corner). Distances between cells are great-circle
//! distances between cell centroids.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::error::{invalid_input, Error, Result};

/// Mean Earth radius (IUGG), meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Reserved area id for cells that fall outside every planning area.
pub const UNASSIGNED_AREA: &str = "_unassigned";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellId {
    pub row: u32,
    pub col: u32,
}

impl CellId {
    pub const fn new(row: u32, col: u32) -> Self {
        Self { row, col }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub cell_size_m: f64,
    pub n_rows: u32,
    pub n_cols: u32,
}

impl GridSpec {
    pub fn new(
        origin_lat: f64,
        origin_lon: f64,
        cell_size_m: f64,
        n_rows: u32,
        n_cols: u32,
    ) -> Result<Self> {
        if !(origin_lat.is_finite() && origin_lon.is_finite()) {
            return Err(Error::InvalidConfig("grid origin must be finite".into()));
        }
        if !(origin_lat.abs() < 90.0 && (-180.0..=180.0).contains(&origin_lon)) {
            return Err(Error::InvalidConfig("grid origin out of range".into()));
        }
        if !(cell_size_m.is_finite() && cell_size_m > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "cell_size_m must be > 0, got {cell_size_m}"
            )));
        }
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::InvalidConfig("grid needs at least one row and column".into()));
        }
        Ok(Self {
            origin_lat,
            origin_lon,
            cell_size_m,
            n_rows,
            n_cols,
        })
    }

    /// Smallest grid anchored at (`min_lat`, `min_lon`) whose cells cover the
    /// given bounding box.
    pub fn covering(
        min_lat: f64,
        min_lon: f64,
        max_lat: f64,
        max_lon: f64,
        cell_size_m: f64,
    ) -> Result<Self> {
        let probe = Self::new(min_lat, min_lon, cell_size_m, 1, 1)?;
        let (east, north) = probe.project(max_lat, max_lon);
        if !(east >= 0.0 && north >= 0.0) {
            return Err(Error::InvalidConfig("bounding box max is below its min".into()));
        }
        let n_rows = (north / cell_size_m).floor() as u32 + 1;
        let n_cols = (east / cell_size_m).floor() as u32 + 1;
        Self::new(min_lat, min_lon, cell_size_m, n_rows, n_cols)
    }

    pub fn n_cells(&self) -> usize {
        self.n_rows as usize * self.n_cols as usize
    }

    pub fn contains_cell(&self, cell: CellId) -> bool {
        cell.row < self.n_rows && cell.col < self.n_cols
    }

    /// Row-major linear index of a cell.
    pub fn linear_index(&self, cell: CellId) -> usize {
        cell.row as usize * self.n_cols as usize + cell.col as usize
    }

    pub fn cell_at(&self, index: usize) -> CellId {
        let n_cols = self.n_cols as usize;
        CellId::new((index / n_cols) as u32, (index % n_cols) as u32)
    }

    fn meters_per_deg_lat(&self) -> f64 {
        EARTH_RADIUS_M.to_radians()
    }

    fn meters_per_deg_lon(&self) -> f64 {
        EARTH_RADIUS_M.to_radians() * self.origin_lat.to_radians().cos()
    }

    /// Local (east, north) offset in meters from the grid origin.
    pub fn project(&self, lat: f64, lon: f64) -> (f64, f64) {
        let east = (lon - self.origin_lon) * self.meters_per_deg_lon();
        let north = (lat - self.origin_lat) * self.meters_per_deg_lat();
        (east, north)
    }

    /// Inverse of [`GridSpec::project`], returning (lat, lon).
    pub fn unproject(&self, east: f64, north: f64) -> (f64, f64) {
        let lat = self.origin_lat + north / self.meters_per_deg_lat();
        let lon = self.origin_lon + east / self.meters_per_deg_lon();
        (lat, lon)
    }

    /// Cell whose half-open extent contains the point, or `None` when the
    /// point lies outside the grid.
    pub fn locate(&self, lat: f64, lon: f64) -> Result<Option<CellId>> {
        if !(lat.is_finite() && lon.is_finite()) {
            return Err(invalid_input(format!("non-finite coordinate ({lat}, {lon})")));
        }
        let (east, north) = self.project(lat, lon);
        let col = (east / self.cell_size_m).floor();
        let row = (north / self.cell_size_m).floor();
        if row < 0.0 || col < 0.0 || row >= self.n_rows as f64 || col >= self.n_cols as f64 {
            return Ok(None);
        }
        Ok(Some(CellId::new(row as u32, col as u32)))
    }

    /// Centroid of a cell as (lat, lon).
    pub fn centroid(&self, cell: CellId) -> (f64, f64) {
        self.unproject(
            (cell.col as f64 + 0.5) * self.cell_size_m,
            (cell.row as f64 + 0.5) * self.cell_size_m,
        )
    }

    /// Great-circle distance between the centroids of two cells.
    pub fn cell_distance_m(&self, a: CellId, b: CellId) -> f64 {
        debug_assert!(self.contains_cell(a) && self.contains_cell(b));
        if a == b {
            return 0.0;
        }
        let (lat1, lon1) = self.centroid(a);
        let (lat2, lon2) = self.centroid(b);
        haversine_m(lat1, lon1, lat2, lon2)
    }
}

/// Haversine great-circle distance in meters.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (phi1, phi2) = (lat1.to_radians(), lat2.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (lon2 - lon1).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// A closed ring of `[lon, lat]` positions (first == last).
pub type Ring = Vec<[f64; 2]>;

#[derive(Debug, Clone, PartialEq)]
pub struct PlanningArea {
    pub area_id: String,
    pub name: String,
    /// All rings of all parts. Membership uses the even-odd rule across every
    /// ring, so holes and disjoint parts need no special casing.
    pub rings: Vec<Ring>,
    /// Footprint in square meters.
    pub area_m2: f64,
    pub households: Option<f64>,
    pub monthly_kwh_per_household: Option<f64>,
}

impl PlanningArea {
    pub fn new(
        area_id: impl Into<String>,
        name: impl Into<String>,
        rings: Vec<Ring>,
        area_m2: f64,
    ) -> Result<Self> {
        let area = Self {
            area_id: area_id.into(),
            name: name.into(),
            rings,
            area_m2,
            households: None,
            monthly_kwh_per_household: None,
        };
        area.validate()?;
        Ok(area)
    }

    pub fn with_households(mut self, households: f64, monthly_kwh_per_household: f64) -> Self {
        self.households = Some(households);
        self.monthly_kwh_per_household = Some(monthly_kwh_per_household);
        self
    }

    /// Axis-aligned rectangle helper, mostly for demos and tests.
    pub fn rectangle(
        area_id: impl Into<String>,
        name: impl Into<String>,
        min_lat: f64,
        min_lon: f64,
        max_lat: f64,
        max_lon: f64,
    ) -> Result<Self> {
        let ring = vec![
            [min_lon, min_lat],
            [max_lon, min_lat],
            [max_lon, max_lat],
            [min_lon, max_lat],
            [min_lon, min_lat],
        ];
        let mid_lat = 0.5 * (min_lat + max_lat);
        let width = (max_lon - min_lon).to_radians() * EARTH_RADIUS_M * mid_lat.to_radians().cos();
        let height = (max_lat - min_lat).to_radians() * EARTH_RADIUS_M;
        Self::new(area_id, name, vec![ring], width * height)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rings.is_empty() {
            return Err(Error::InvalidGeometry(format!("area {} has no rings", self.area_id)));
        }
        for ring in &self.rings {
            // A closed triangle has four positions.
            if ring.len() < 4 {
                return Err(Error::InvalidGeometry(format!(
                    "area {}: ring has fewer than 3 vertices",
                    self.area_id
                )));
            }
            if ring.first() != ring.last() {
                return Err(Error::InvalidGeometry(format!(
                    "area {}: ring is not closed",
                    self.area_id
                )));
            }
            if ring.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidGeometry(format!(
                    "area {}: non-finite vertex",
                    self.area_id
                )));
            }
        }
        if !(self.area_m2.is_finite() && self.area_m2 > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "area {}: area_m2 must be > 0",
                self.area_id
            )));
        }
        for (name, value) in [
            ("households", self.households),
            ("monthly_kwh_per_household", self.monthly_kwh_per_household),
        ] {
            if let Some(v) = value {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::InvalidGeometry(format!(
                        "area {}: {name} must be non-negative",
                        self.area_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Even-odd point-in-polygon test; points on any edge count as inside.
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        let mut inside = false;
        for ring in &self.rings {
            for edge in ring.windows(2) {
                let [x1, y1] = edge[0];
                let [x2, y2] = edge[1];
                if on_segment(lon, lat, x1, y1, x2, y2) {
                    return true;
                }
                if (y1 > lat) != (y2 > lat) {
                    let x_cross = x1 + (lat - y1) * (x2 - x1) / (y2 - y1);
                    if lon < x_cross {
                        inside = !inside;
                    }
                }
            }
        }
        inside
    }

    fn bbox(&self) -> [f64; 4] {
        let mut bb = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for &[lon, lat] in self.rings.iter().flatten() {
            bb[0] = bb[0].min(lon);
            bb[1] = bb[1].min(lat);
            bb[2] = bb[2].max(lon);
            bb[3] = bb[3].max(lat);
        }
        bb
    }
}

fn on_segment(px: f64, py: f64, x1: f64, y1: f64, x2: f64, y2: f64) -> bool {
    let scale = (x2 - x1).abs().max((y2 - y1).abs()).max(1e-300);
    let cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
    if cross.abs() > 1e-12 * scale {
        return false;
    }
    px >= x1.min(x2) && px <= x1.max(x2) && py >= y1.min(y2) && py <= y1.max(y2)
}

/// Mapping from grid cells to planning areas.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaIndex {
    grid: GridSpec,
    /// Sorted area ids; cell entries index into this list.
    area_ids: Vec<String>,
    cells: Vec<Option<u32>>,
}

impl AreaIndex {
    /// Assigns every cell centroid to the first area (in lexicographic
    /// `area_id` order) that contains it.
    pub fn build(grid: &GridSpec, areas: &[PlanningArea]) -> Result<Self> {
        for area in areas {
            area.validate()?;
        }
        let mut order: Vec<&PlanningArea> = areas.iter().collect();
        order.sort_by(|a, b| a.area_id.cmp(&b.area_id));
        if let Some(pair) = order.windows(2).find(|w| w[0].area_id == w[1].area_id) {
            return Err(Error::InvalidGeometry(format!(
                "duplicate area_id {}",
                pair[0].area_id
            )));
        }
        let boxes: Vec<[f64; 4]> = order.iter().map(|a| a.bbox()).collect();

        let cells = (0..grid.n_cells())
            .into_par_iter()
            .map(|i| {
                let (lat, lon) = grid.centroid(grid.cell_at(i));
                order
                    .iter()
                    .zip(&boxes)
                    .position(|(area, bb)| {
                        lon >= bb[0]
                            && lon <= bb[2]
                            && lat >= bb[1]
                            && lat <= bb[3]
                            && area.contains(lat, lon)
                    })
                    .map(|p| p as u32)
            })
            .collect();

        Ok(Self {
            grid: grid.clone(),
            area_ids: order.iter().map(|a| a.area_id.clone()).collect(),
            cells,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Sorted ids of all indexed areas (excluding the unassigned bucket).
    pub fn area_ids(&self) -> &[String] {
        &self.area_ids
    }

    /// Position of the cell's area in [`AreaIndex::area_ids`].
    pub fn area_slot(&self, cell: CellId) -> Option<usize> {
        if !self.grid.contains_cell(cell) {
            return None;
        }
        self.cells[self.grid.linear_index(cell)].map(|s| s as usize)
    }

    pub fn area_of(&self, cell: CellId) -> Option<&str> {
        self.area_slot(cell).map(|s| self.area_ids[s].as_str())
    }

    pub fn unassigned_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.is_none()).count()
    }
}

fn parse_ring(value: &Value) -> Result<Ring> {
    let positions = value
        .as_array()
        .ok_or_else(|| Error::InvalidGeometry("ring is not an array".into()))?;
    positions
        .iter()
        .map(|p| {
            let pair = p.as_array().filter(|a| a.len() >= 2);
            match pair.map(|a| (a[0].as_f64(), a[1].as_f64())) {
                Some((Some(lon), Some(lat))) => Ok([lon, lat]),
                _ => Err(Error::InvalidGeometry("position is not [lon, lat]".into())),
            }
        })
        .collect()
}

fn parse_rings(geometry: &Value) -> Result<Vec<Ring>> {
    let kind = geometry.get("type").and_then(Value::as_str).unwrap_or_default();
    let coords = geometry
        .get("coordinates")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::InvalidGeometry("geometry without coordinates".into()))?;
    match kind {
        "Polygon" => coords.iter().map(parse_ring).collect(),
        "MultiPolygon" => {
            let mut rings = Vec::new();
            for polygon in coords {
                let parts = polygon
                    .as_array()
                    .ok_or_else(|| Error::InvalidGeometry("polygon is not an array".into()))?;
                for ring in parts {
                    rings.push(parse_ring(ring)?);
                }
            }
            Ok(rings)
        }
        other => Err(Error::InvalidGeometry(format!("unsupported geometry type {other:?}"))),
    }
}

fn optional_number(props: &Map<String, Value>, key: &str) -> Result<Option<f64>> {
    match props.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| Error::InvalidGeometry(format!("property {key} is not a number"))),
    }
}

/// Parses planning areas from a GeoJSON FeatureCollection.
pub fn parse_planning_areas(text: &str) -> Result<Vec<PlanningArea>> {
    let doc: Value = serde_json::from_str(text)?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::InvalidGeometry("expected a FeatureCollection".into()))?;
    let mut areas = Vec::with_capacity(features.len());
    for feature in features {
        let props = feature
            .get("properties")
            .and_then(Value::as_object)
            .ok_or_else(|| Error::InvalidGeometry("feature without properties".into()))?;
        let area_id = props
            .get("area_id")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::InvalidGeometry("feature without string area_id".into()))?;
        let area_m2 = optional_number(props, "area_m2")?
            .ok_or_else(|| Error::InvalidGeometry(format!("area {area_id} without area_m2")))?;
        let name = props.get("name").and_then(Value::as_str).unwrap_or(area_id);
        let geometry = feature
            .get("geometry")
            .ok_or_else(|| Error::InvalidGeometry(format!("area {area_id} without geometry")))?;
        let area = PlanningArea {
            area_id: area_id.to_owned(),
            name: name.to_owned(),
            rings: parse_rings(geometry)?,
            area_m2,
            households: optional_number(props, "households")?,
            monthly_kwh_per_household: optional_number(props, "monthly_kwh_per_household")?,
        };
        area.validate()?;
        areas.push(area);
    }
    Ok(areas)
}

pub fn read_planning_areas(path: impl AsRef<Path>) -> Result<Vec<PlanningArea>> {
    parse_planning_areas(&fs::read_to_string(path)?)
}

/// GeoJSON feature for an area, with `extra` merged into its properties.
pub fn area_feature(area: &PlanningArea, extra: Map<String, Value>) -> Value {
    let mut props = Map::new();
    props.insert("area_id".into(), json!(area.area_id));
    props.insert("name".into(), json!(area.name));
    props.insert("area_m2".into(), json!(area.area_m2));
    if let Some(h) = area.households {
        props.insert("households".into(), json!(h));
    }
    if let Some(m) = area.monthly_kwh_per_household {
        props.insert("monthly_kwh_per_household".into(), json!(m));
    }
    props.extend(extra);
    let geometry = if area.rings.len() == 1 {
        json!({ "type": "Polygon", "coordinates": [area.rings[0]] })
    } else {
        let parts: Vec<Vec<&Ring>> = area.rings.iter().map(|r| vec![r]).collect();
        json!({ "type": "MultiPolygon", "coordinates": parts })
    };
    json!({ "type": "Feature", "properties": props, "geometry": geometry })
}

pub fn feature_collection(features: Vec<Value>) -> Value {
    json!({ "type": "FeatureCollection", "features": features })
}
