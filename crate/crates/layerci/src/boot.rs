// SPDX-License-Identifier: Apache-2.0

//! Booting through an external emulator command.
//!
//! The command's standard output is read line by line until the login
//! prompt appears, the command exits, or the timeout expires. The
//! resulting transcript is evaluated exactly like a simulated one.

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use layerci_core::boot::{BootTranscript, LOGIN_PROMPT};

pub const IMAGE_PLACEHOLDER: &str = "{image}";

#[derive(Debug, thiserror::Error)]
pub enum ExternalBootError {
    #[error("cannot start emulator command: {0}")]
    Spawn(std::io::Error),
    #[error("no login prompt within {seconds} s ({} lines captured)", transcript.lines.len())]
    Timeout { seconds: f64, transcript: BootTranscript },
}

/// Single-quotes `s` for `sh`.
fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

/// Runs `template` (with `{image}` replaced by the quoted image path) via
/// `sh -c` and captures its console output.
///
/// Capture stops early at the login prompt, after which the command is
/// killed; the lines after the prompt are whatever arrived with it.
pub fn run_external_boot(
    image_file: &Path,
    template: &str,
    timeout: Duration,
) -> Result<BootTranscript, ExternalBootError> {
    if !template.contains(IMAGE_PLACEHOLDER) {
        log::warn!("emulator command has no {IMAGE_PLACEHOLDER} placeholder; running it unchanged");
    }
    let command = template.replace(IMAGE_PLACEHOLDER, &shell_quote(&image_file.display().to_string()));
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&command)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(ExternalBootError::Spawn)?;
    let stdout = child.stdout.take().expect("stdout is piped");

    let (tx, rx) = mpsc::channel();
    // The reader is detached: a grandchild may keep the pipe open after
    // the shell is killed, and it must not hold up the caller.
    std::thread::spawn(move || {
        for line in BufReader::new(stdout).lines() {
            let Ok(line) = line else { break };
            if tx.send(line).is_err() {
                break;
            }
        }
    });

    let deadline = Instant::now() + timeout;
    let mut lines = Vec::new();
    let mut timed_out = false;
    loop {
        let remaining = deadline.saturating_duration_since(Instant::now());
        match rx.recv_timeout(remaining) {
            Ok(line) => {
                let login = line.trim_end() == LOGIN_PROMPT;
                lines.push(line);
                if login {
                    // Collect whatever is already buffered after the prompt.
                    while let Ok(more) = rx.recv_timeout(Duration::from_millis(200)) {
                        lines.push(more);
                    }
                    break;
                }
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => break,
            Err(mpsc::RecvTimeoutError::Timeout) => {
                timed_out = true;
                break;
            }
        }
    }
    let _ = child.kill();
    let _ = child.wait();
    let transcript = BootTranscript::from_lines(lines);
    if timed_out {
        return Err(ExternalBootError::Timeout { seconds: timeout.as_secs_f64(), transcript });
    }
    Ok(transcript)
}
