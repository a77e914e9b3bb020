pub mod access;
pub mod node;
pub mod params;
pub mod separated;
