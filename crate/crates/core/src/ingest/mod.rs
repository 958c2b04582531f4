//! Station and background-field ingestion.

mod gridpack;
mod stations;

pub use gridpack::{
    canonical_channel_labels, canonical_channels, decode_grid_pack, load_grid_pack, pack_paths, write_grid_pack,
    ChannelInfo, GridPackSidecar, GridSource, Lattice, GRID_PACK_MAGIC, LEVEL_VARIABLES, N_CHANNELS, PRECIP_CHANNEL,
    PRESSURE_LEVELS_HPA,
};
pub use stations::{
    aggregate_to_hourly, group_by_station, parse_station_observations, read_station_observations, ParsedObservations,
    RowError, StationCatalog, StationInfo, StationObservation, StationStore, StationSystem,
};
