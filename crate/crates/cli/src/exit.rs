//! Process exit codes.

use seedsplat::Error;

pub const SUCCESS: i32 = 0;
pub const INPUT_ERROR: i32 = 1;
pub const PRECONDITION: i32 = 2;
pub const NUMERIC: i32 = 3;

/// Maps an error chain to an exit code via the first library error in it.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e.root() {
                Error::Precondition(_) => PRECONDITION,
                Error::NonFinite(_) => NUMERIC,
                _ => INPUT_ERROR,
            };
        }
    }
    INPUT_ERROR
}
