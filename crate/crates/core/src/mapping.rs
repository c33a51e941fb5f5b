use std::collections::BTreeMap;

use crate::cell::{RegionCode, RegionLevel};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountyInfo {
    pub state: String,
    pub census_region: String,
    pub msa: Option<String>,
}

/// County FIPS -> state -> census region -> nation lookup, plus optional MSA.
#[derive(Clone, Debug, Default)]
pub struct RegionMapping {
    counties: BTreeMap<String, CountyInfo>,
    state_regions: BTreeMap<String, String>,
}

impl RegionMapping {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, fips: &str, info: CountyInfo) -> Result<()> {
        RegionCode::county(fips)?;
        RegionCode::state(info.state.clone())?;
        if let Some(prev) = self.state_regions.get(&info.state) {
            if *prev != info.census_region {
                return Err(Error::Validation(format!(
                    "state {} assigned to census regions {} and {}",
                    info.state, prev, info.census_region
                )));
            }
        }
        self.state_regions.insert(info.state.clone(), info.census_region.clone());
        self.counties.insert(fips.to_string(), info);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.counties.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counties.is_empty()
    }

    pub fn county(&self, fips: &str) -> Option<&CountyInfo> {
        self.counties.get(fips)
    }

    pub fn counties(&self) -> impl Iterator<Item = (&String, &CountyInfo)> {
        self.counties.iter()
    }

    /// Region containing `region` at `level`.
    ///
    /// Returns `Ok(None)` when the target is not derivable from the mapping
    /// (finer than the source, or an MSA column that was not supplied), and
    /// an [`Error::UnmappedCounties`] when a county is absent.
    pub fn parent(&self, region: &RegionCode, level: RegionLevel) -> Result<Option<RegionCode>> {
        if region.level() == level {
            return Ok(Some(region.clone()));
        }
        if level == RegionLevel::Nation {
            return Ok(Some(RegionCode::nation()));
        }
        match region.level() {
            RegionLevel::County => {
                let info = self
                    .counties
                    .get(region.code())
                    .ok_or_else(|| Error::UnmappedCounties(vec![region.code().to_string()]))?;
                match level {
                    RegionLevel::State => Ok(Some(RegionCode::state(info.state.clone())?)),
                    RegionLevel::CensusRegion => {
                        Ok(Some(RegionCode::new(RegionLevel::CensusRegion, info.census_region.clone())?))
                    }
                    RegionLevel::Msa => match &info.msa {
                        Some(m) => Ok(Some(RegionCode::new(RegionLevel::Msa, m.clone())?)),
                        None => Ok(None),
                    },
                    _ => Ok(None),
                }
            }
            RegionLevel::State if level == RegionLevel::CensusRegion => {
                match self.state_regions.get(region.code()) {
                    Some(r) => Ok(Some(RegionCode::new(RegionLevel::CensusRegion, r.clone())?)),
                    None => Err(Error::Validation(format!("state {} not in mapping", region.code()))),
                }
            }
            _ => Ok(None),
        }
    }
}
