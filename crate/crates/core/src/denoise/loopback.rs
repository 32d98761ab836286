//! Reference worker speaking FDN1, backed by the closed-form denoisers.
//!
//! Used by `targetfill worker` and by the protocol tests. The fault modes let
//! tests exercise the client's handling of misbehaving workers.

use std::io::{Read, Write};

use log::debug;

use super::protocol::{read_frame, write_frame, Message, MAGIC};
use super::{analytic_epsilon, oracle_epsilon};
use crate::error::{Error, Result};
use crate::noise::NoiseSchedule;
use crate::tensor::{ImageTensor, Shape};

#[derive(Debug, Clone)]
pub enum WorkerMode {
    Oracle { reference: ImageTensor },
    Gaussian { mu: f64, var: f64 },
}

/// Deliberate misbehaviour for exercising the client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Answer HELLO with a frame whose magic is wrong.
    BadMagic,
    /// Answer EPS_REQ with one element too few.
    WrongShape,
    /// Read EPS_REQ but never answer.
    Silent,
}

impl std::str::FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "none" => Fault::None,
            "bad-magic" => Fault::BadMagic,
            "wrong-shape" => Fault::WrongShape,
            "silent" => Fault::Silent,
            other => return Err(format!("unknown fault `{other}`")),
        })
    }
}

struct Session {
    shape: Shape,
    sched: NoiseSchedule,
}

/// Serves requests until SHUTDOWN or end of input. Protocol violations are
/// answered with an ERROR frame and returned as errors.
pub fn serve<R: Read, W: Write>(
    mut input: R,
    mut output: W,
    mode: &WorkerMode,
    fault: Fault,
) -> Result<()> {
    let mut session: Option<Session> = None;
    loop {
        let msg = match read_frame(&mut input) {
            Ok(Some(msg)) => msg,
            Ok(None) => return Ok(()),
            Err(e) => return fail(&mut output, e),
        };
        match msg {
            Message::Hello { shape, betas } => {
                debug!("HELLO T={} shape={shape}", betas.len());
                if let WorkerMode::Oracle { reference } = mode {
                    if reference.shape() != shape {
                        return fail(
                            &mut output,
                            Error::ShapeMismatch {
                                expected: reference.shape(),
                                actual: shape,
                            },
                        );
                    }
                }
                let sched = match NoiseSchedule::from_betas(
                    betas.iter().map(|b| *b as f64).collect(),
                ) {
                    Ok(s) => s,
                    Err(e) => return fail(&mut output, e),
                };
                session = Some(Session { shape, sched });
                if fault == Fault::BadMagic {
                    let mut frame = Message::HelloAck.encode();
                    frame[..4].copy_from_slice(b"XDN1");
                    debug_assert_ne!(frame[..4], MAGIC);
                    output.write_all(&frame)?;
                    output.flush()?;
                } else {
                    write_frame(&mut output, &Message::HelloAck)?;
                }
            }
            Message::EpsReq { t, x_t } => {
                let Some(s) = session.as_ref() else {
                    return fail(&mut output, Error::Protocol("EPS_REQ before HELLO".into()));
                };
                let t = t as usize;
                if t == 0 || t > s.sched.timesteps() {
                    return fail(
                        &mut output,
                        Error::Protocol(format!("timestep {t} outside [1, {}]", s.sched.timesteps())),
                    );
                }
                if x_t.len() != s.shape.len() {
                    return fail(
                        &mut output,
                        Error::Protocol(format!(
                            "EPS_REQ carries {} values for shape {}",
                            x_t.len(),
                            s.shape
                        )),
                    );
                }
                if fault == Fault::Silent {
                    continue;
                }
                let abar = s.sched.alpha_bar(t);
                let mut eps: Vec<f32> = match mode {
                    WorkerMode::Oracle { reference } => x_t
                        .iter()
                        .zip(reference.data())
                        .map(|(&x, &r)| oracle_epsilon(x, r, abar))
                        .collect(),
                    WorkerMode::Gaussian { mu, var } => x_t
                        .iter()
                        .map(|&x| analytic_epsilon(x, *mu, *var, abar))
                        .collect(),
                };
                if fault == Fault::WrongShape {
                    eps.pop();
                }
                write_frame(&mut output, &Message::EpsResp { eps })?;
            }
            Message::Shutdown => {
                debug!("SHUTDOWN");
                return Ok(());
            }
            other => {
                return fail(
                    &mut output,
                    Error::Protocol(format!("unexpected {:?} from engine", other.msg_type())),
                )
            }
        }
    }
}

fn fail<W: Write>(output: &mut W, err: Error) -> Result<()> {
    // The peer may already be gone; the original error is what matters.
    let _ = write_frame(output, &Message::Error(err.to_string()));
    Err(err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::protocol::read_frame;

    fn run(input: Vec<Message>, mode: &WorkerMode) -> (Result<()>, Vec<Message>) {
        let mut bytes = Vec::new();
        for m in &input {
            write_frame(&mut bytes, m).unwrap();
        }
        let mut out = Vec::new();
        let res = serve(bytes.as_slice(), &mut out, mode, Fault::None);
        let mut reader = out.as_slice();
        let mut replies = Vec::new();
        while let Some(m) = read_frame(&mut reader).unwrap() {
            replies.push(m);
        }
        (res, replies)
    }

    #[test]
    fn request_before_hello_is_rejected() {
        let (res, replies) = run(
            vec![Message::EpsReq {
                t: 1,
                x_t: vec![0.0],
            }],
            &WorkerMode::Gaussian { mu: 0.0, var: 1.0 },
        );
        assert!(res.is_err());
        assert!(matches!(replies.as_slice(), [Message::Error(_)]));
    }

    #[test]
    fn oracle_identity_over_the_wire() {
        let shape = Shape::new(1, 1, 2);
        let reference = ImageTensor::from_vec(shape, vec![0.5, -0.5]).unwrap();
        let betas = vec![0.1f32, 0.2];
        let abar = (1.0 - 0.1f32 as f64) * (1.0 - 0.2f32 as f64);
        let x_t = reference
            .data()
            .iter()
            .map(|&r| (abar.sqrt() * r as f64) as f32)
            .collect();
        let (res, replies) = run(
            vec![
                Message::Hello { shape, betas },
                Message::EpsReq { t: 2, x_t },
                Message::Shutdown,
            ],
            &WorkerMode::Oracle { reference },
        );
        res.unwrap();
        assert_eq!(replies[0], Message::HelloAck);
        let Message::EpsResp { eps } = &replies[1] else {
            panic!("expected EPS_RESP, got {:?}", replies[1]);
        };
        assert!(eps.iter().all(|e| e.abs() < 1e-6));
    }

    #[test]
    fn oracle_rejects_mismatched_handshake() {
        let reference = ImageTensor::zeros(Shape::new(1, 2, 2));
        let (res, replies) = run(
            vec![Message::Hello {
                shape: Shape::new(3, 2, 2),
                betas: vec![0.1],
            }],
            &WorkerMode::Oracle { reference },
        );
        assert!(matches!(res, Err(Error::ShapeMismatch { .. })));
        assert!(matches!(replies.as_slice(), [Message::Error(_)]));
    }
}
