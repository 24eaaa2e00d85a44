//! `icpd`: policy decision point, token broker, federation endpoint and
//! audit log behind one HTTP/JSON API.

pub mod api;
pub mod bench;
pub mod config;
pub mod error;
pub mod http;
pub mod keys;
pub mod plane;

pub use api::ENDPOINTS;
pub use config::ServiceConfig;
pub use error::ServiceError;
pub use plane::ControlPlane;
