//! On-disk formats: PLY clouds, CSV scan/pose logs, CSV cloud fallback.

pub mod csv;
pub mod ply;

pub use csv::{
    read_cloud_csv, read_pose_log, read_scan_log, write_cloud_csv, write_pose_log, write_scan_log,
};
pub use ply::{read_ply, write_ply};
