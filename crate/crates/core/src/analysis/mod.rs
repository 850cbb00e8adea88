//! Design assessment: spot diagrams, geometric MTF, field of view, eye box,
//! varifocal mapping, resolution profile and trade-space sweeps.

pub mod eyebox;
pub mod focus;
pub mod fov;
pub mod mtf;
pub mod resolution;
pub mod spot;
pub mod trade;

pub use eyebox::{eyebox, EyeBox, EyeBoxOptions};
pub use focus::{delta_a_for, focus_mapping, travel_span, FocusPoint};
pub use fov::{fov, Fov};
pub use mtf::{geometric_mtf, mtf50, MtfCurve};
pub use resolution::{resolution_profile, ResolutionSample};
pub use spot::{ar_spot, spot, EyeFocus, SpotDiagram};
pub use trade::{trade_sweep, TradeCurve, TradeOptions, TradeVariable};
