//! Frame residual serialization and residual application.

mod coo;
mod packet;
mod range;
mod residual;

pub use coo::{coo_decode, coo_encode, SparseCoo};
pub use packet::{pack_frame, unpack_frame, HEADER_LEN, PACKET_MAGIC, PACKET_VERSION, TABLE_ENTRY_LEN};
pub use range::{empirical_entropy, entropy_decode, entropy_encode};
pub use residual::{apply_residuals, dense_positions, record_to_f16, round_f16, AttributeResidual, ResidualSet};
