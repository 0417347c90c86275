//! Command-line front end: configuration resolution, backend and
//! environment setup, and the subcommands.

pub mod commands;
pub mod config;
pub mod setup;

use dice_core::Error;

/// Process exit code for an operational error.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_unreachable() {
        3
    } else {
        2
    }
}
