//! Encode each message kind, print the frame bytes, and decode a
//! concatenated stream back.
//!
//! cargo run --example framing

use fedveca::fed::ClientReport;
use fedveca::numerics::ParamVector;
use fedveca::transport::frame::decode_stream;
use fedveca::transport::{encode_frame, Message};

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect::<Vec<_>>().join(" ")
}

pub fn run_example() -> fedveca::Result<()> {
    let messages = vec![
        Message::RoundStart {
            round: 3,
            tau: 20,
            w: ParamVector::new(vec![1.0, -0.5]),
        },
        Message::PrevGlobalGrad {
            round: 2,
            grad: ParamVector::new(vec![0.25]),
        },
        Message::Report(ClientReport {
            client_id: 1,
            direction: ParamVector::new(vec![0.5]),
            grad_at_start: ParamVector::new(vec![2.0]),
            loss_at_start: 1.0,
            beta: Some(1.5),
            delta: Some(3.0),
            tau_used: 20,
        }),
        Message::Stop,
    ];
    let mut stream = Vec::new();
    for m in &messages {
        let frame = encode_frame(m)?;
        println!("tag {:#04x}, {:>3} bytes: {}", m.tag(), frame.len(), hex(&frame));
        stream.extend(frame);
    }
    let back = decode_stream(&stream)?;
    assert_eq!(back, messages);
    println!("decoded {} messages from a {}-byte stream", back.len(), stream.len());
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
