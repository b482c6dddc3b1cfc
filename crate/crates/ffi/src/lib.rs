//! C interface to the coopbo engine.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `_free` function. Every fallible call returns a
//! [`CoopboStatus`]; on failure the message is kept per thread and can be
//! read with [`coopbo_last_error_message`]. Strings returned by the library
//! are owned by the caller and released with [`coopbo_string_free`].
//! Configurations and traces travel as JSON text.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use coopbo::game::{run_episode, Game, GameConfig, Partner, Phase};
use coopbo::grid::{build_objective, ObjectiveGrid, ObjectiveSpec};
use coopbo::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoopboStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutOfRange = 3,
    Protocol = 4,
    Numerical = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoopboPhase {
    AwaitingAiMove = 0,
    AwaitingUserMove = 1,
    Finished = 2,
}

/// One completed round.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CoopboRound {
    /// 1-based round index.
    pub round: usize,
    pub ix: usize,
    pub iy: usize,
    /// Noisy observed value.
    pub z: f64,
    /// Optimization score after this round.
    pub score: f64,
    pub finished: bool,
}

/// Opaque objective handle.
pub struct CoopboObjective(ObjectiveGrid);

/// Opaque game handle.
pub struct CoopboGame(Game);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CoopboStatus {
    match e {
        Error::OutOfRange { .. } => CoopboStatus::OutOfRange,
        Error::Protocol(_) => CoopboStatus::Protocol,
        Error::Numerical(_) | Error::NonFinite { .. } => CoopboStatus::Numerical,
        Error::Io { .. } => CoopboStatus::Io,
        _ => CoopboStatus::InvalidArgument,
    }
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (CoopboStatus, String)>) -> CoopboStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CoopboStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside coopbo".into());
            CoopboStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (CoopboStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (CoopboStatus, String) {
    (CoopboStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `s` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, (CoopboStatus, String)> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| (CoopboStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn into_c_string(s: String) -> Result<*mut c_char, (CoopboStatus, String)> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| (CoopboStatus::InvalidArgument, "string contains NUL".into()))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn coopbo_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn coopbo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must be null or a pointer returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coopbo_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// The standard three-mode objective; `variant` picks the global mode.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn coopbo_objective_standard(variant: usize, out: *mut *mut CoopboObjective) -> CoopboStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let obj = build_objective(&ObjectiveSpec::standard(variant)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(CoopboObjective(obj)));
        Ok(())
    })
}

/// An objective from a TOML specification.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn coopbo_objective_from_toml(toml: *const c_char, out: *mut *mut CoopboObjective) -> CoopboStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = ObjectiveSpec::from_toml_str(read_str(toml, "toml")?).map_err(lib_err)?;
        let obj = build_objective(&spec).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(CoopboObjective(obj)));
        Ok(())
    })
}

/// # Safety
/// `obj` must be a live handle; `nx` and `ny` writable.
#[no_mangle]
pub unsafe extern "C" fn coopbo_objective_size(obj: *const CoopboObjective, nx: *mut usize, ny: *mut usize) -> CoopboStatus {
    guard(|| {
        let obj = obj.as_ref().ok_or_else(|| null("objective"))?;
        if nx.is_null() || ny.is_null() {
            return Err(null("out"));
        }
        let g = obj.0.grid();
        *nx = g.nx();
        *ny = g.ny();
        Ok(())
    })
}

/// Noiseless value of cell `(ix, iy)` on the 0 to 100 scale.
///
/// # Safety
/// `obj` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn coopbo_objective_value(obj: *const CoopboObjective, ix: usize, iy: usize, out: *mut f64) -> CoopboStatus {
    guard(|| {
        let obj = obj.as_ref().ok_or_else(|| null("objective"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = obj.0.value(ix, iy).map_err(lib_err)?;
        Ok(())
    })
}

/// # Safety
/// `obj` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coopbo_objective_free(obj: *mut CoopboObjective) {
    if !obj.is_null() {
        drop(Box::from_raw(obj));
    }
}

/// Creates a game from a JSON game configuration. With `human` false the
/// second coordinate comes from the configured synthetic user.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn coopbo_game_new(config_json: *const c_char, human: bool, out: *mut *mut CoopboGame) -> CoopboStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg: GameConfig = serde_json::from_str(read_str(config_json, "config_json")?)
            .map_err(|e| (CoopboStatus::InvalidArgument, e.to_string()))?;
        let partner = if human { Partner::Human } else { Partner::Synthetic };
        let game = Game::new(cfg, partner).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(CoopboGame(game)));
        Ok(())
    })
}

/// # Safety
/// `game` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coopbo_game_free(game: *mut CoopboGame) {
    if !game.is_null() {
        drop(Box::from_raw(game));
    }
}

/// # Safety
/// `game` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn coopbo_game_phase(game: *const CoopboGame, out: *mut CoopboPhase) -> CoopboStatus {
    guard(|| {
        let game = game.as_ref().ok_or_else(|| null("game"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = match game.0.phase() {
            Phase::AwaitingAiMove => CoopboPhase::AwaitingAiMove,
            Phase::AwaitingUserMove => CoopboPhase::AwaitingUserMove,
            Phase::Finished => CoopboPhase::Finished,
        };
        Ok(())
    })
}

/// Runs the AI policy and writes the chosen column to `ix`.
///
/// # Safety
/// `game` must be a live handle and `ix` writable.
#[no_mangle]
pub unsafe extern "C" fn coopbo_game_ai_move(game: *mut CoopboGame, ix: *mut usize) -> CoopboStatus {
    guard(|| {
        let game = game.as_mut().ok_or_else(|| null("game"))?;
        if ix.is_null() {
            return Err(null("ix"));
        }
        *ix = game.0.ai_move().map_err(lib_err)?.ix();
        Ok(())
    })
}

/// The synthetic user's row for the pending move.
///
/// # Safety
/// `game` must be a live handle and `iy` writable.
#[no_mangle]
pub unsafe extern "C" fn coopbo_game_synthetic_choice(game: *const CoopboGame, iy: *mut usize) -> CoopboStatus {
    guard(|| {
        let game = game.as_ref().ok_or_else(|| null("game"))?;
        if iy.is_null() {
            return Err(null("iy"));
        }
        *iy = game.0.synthetic_user_choice().map_err(lib_err)?;
        Ok(())
    })
}

fn round_of(o: coopbo::game::RoundOutcome) -> CoopboRound {
    CoopboRound {
        round: o.round,
        ix: o.ix,
        iy: o.iy,
        z: o.z,
        score: o.score,
        finished: o.finished,
    }
}

/// Completes the pending round with row `iy`. `out` may be null.
///
/// # Safety
/// `game` must be a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn coopbo_game_user_move(game: *mut CoopboGame, iy: usize, out: *mut CoopboRound) -> CoopboStatus {
    guard(|| {
        let game = game.as_mut().ok_or_else(|| null("game"))?;
        let r = game.0.user_move(iy).map_err(lib_err)?;
        if let Some(out) = out.as_mut() {
            *out = round_of(r);
        }
        Ok(())
    })
}

/// One full round against the synthetic user. `out` may be null.
///
/// # Safety
/// `game` must be a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn coopbo_game_step(game: *mut CoopboGame, out: *mut CoopboRound) -> CoopboStatus {
    guard(|| {
        let game = game.as_mut().ok_or_else(|| null("game"))?;
        let r = game.0.step().map_err(lib_err)?;
        if let Some(out) = out.as_mut() {
            *out = round_of(r);
        }
        Ok(())
    })
}

/// The game trace as JSON; free it with [`coopbo_string_free`].
///
/// # Safety
/// `game` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn coopbo_game_trace_json(game: *const CoopboGame, out: *mut *mut c_char) -> CoopboStatus {
    guard(|| {
        let game = game.as_ref().ok_or_else(|| null("game"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let json = serde_json::to_string(&game.0.trace()).map_err(|e| (CoopboStatus::InvalidArgument, e.to_string()))?;
        *out = into_c_string(json)?;
        Ok(())
    })
}

/// Plays a whole episode against the synthetic user and returns its trace as
/// JSON; free it with [`coopbo_string_free`].
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn coopbo_run_episode(config_json: *const c_char, out: *mut *mut c_char) -> CoopboStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg: GameConfig = serde_json::from_str(read_str(config_json, "config_json")?)
            .map_err(|e| (CoopboStatus::InvalidArgument, e.to_string()))?;
        let trace = run_episode(&cfg).map_err(lib_err)?;
        let json = serde_json::to_string(&trace).map_err(|e| (CoopboStatus::InvalidArgument, e.to_string()))?;
        *out = into_c_string(json)?;
        Ok(())
    })
}
