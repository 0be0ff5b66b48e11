//! Scripted service dialogues for decoys.
//!
//! A script is an ordered list of turns: an expected byte pattern (or ANY),
//! the response bytes, and an optional stage label for the activity log.
//! Matching is sequential and deterministic: the same input byte sequence
//! always yields the same responses and log.

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expect {
    Any,
    Bytes(Vec<u8>),
}

impl Expect {
    pub fn matches(&self, payload: &[u8]) -> bool {
        match self {
            Expect::Any => true,
            Expect::Bytes(pat) => {
                !pat.is_empty() && payload.windows(pat.len()).any(|w| w == &pat[..])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptTurn {
    pub expect: Expect,
    pub respond: Vec<u8>,
    pub stage: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceScript {
    pub name: String,
    pub turns: Vec<ScriptTurn>,
}

impl ServiceScript {
    pub fn new(name: impl Into<String>, turns: Vec<ScriptTurn>) -> ServiceScript {
        let script = ServiceScript {
            name: name.into(),
            turns,
        };
        assert!(!script.turns.is_empty(), "script must have at least one turn");
        script
    }
}

fn turn(expect: &str, respond: &str, stage: &str) -> ScriptTurn {
    ScriptTurn {
        expect: if expect.is_empty() {
            Expect::Any
        } else {
            Expect::Bytes(expect.as_bytes().to_vec())
        },
        respond: respond.as_bytes().to_vec(),
        stage: if stage.is_empty() {
            None
        } else {
            Some(stage.to_string())
        },
    }
}

/// The scripts the canned experiments rely on.
pub fn builtin_scripts() -> Vec<ServiceScript> {
    vec![
        ServiceScript::new(
            "smtp-postfix",
            vec![
                turn("HELO", "250 honeypot\r\n", "SMTP_HELO"),
                turn("MAIL FROM", "250 2.1.0 Ok\r\n", "SMTP_MAIL"),
                turn("RCPT TO", "250 2.1.5 Ok\r\n", "SMTP_RCPT"),
                turn("DATA.", "354 End data with <CR><LF>.<CR><LF>\r\n", "SMTP_DATA"),
                turn("test.", "250 2.0.0 Ok: queued\r\n", "SMTP_QUEUED"),
            ],
        ),
        ServiceScript::new(
            "ftp-amun",
            vec![
                turn("USER", "331 Please specify the password.\r\n", "FTPD_STAGE1"),
                turn("PASS", "230 Login successful.\r\n", "FTPD_STAGE1"),
                turn("CWD", "250 Directory successfully changed.\r\n", "FTPD_STAGE2"),
                turn("TYPE", "200 Switching to ASCII mode.\r\n", "FTPD_STAGE2"),
            ],
        ),
        ServiceScript::new(
            "ssh-banner",
            vec![turn("", "SSH-2.0-OpenSSH_6.6.1p1 Ubuntu-2ubuntu2\r\n", "SSH_BANNER")],
        ),
        ServiceScript::new(
            "distcc-listener",
            vec![turn("", "", "DISTCC_RECV")],
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_lookup_and_matching() {
        let scripts = builtin_scripts();
        let ftp = scripts.iter().find(|s| s.name == "ftp-amun").unwrap();
        assert!(ftp.turns[0].expect.matches(b"USER anonymous \r\n"));
        assert!(!ftp.turns[0].expect.matches(b"PASS anonymous@ \r\n"));
        assert_eq!(ftp.turns[0].stage.as_deref(), Some("FTPD_STAGE1"));
        let ssh = scripts.iter().find(|s| s.name == "ssh-banner").unwrap();
        assert_eq!(ssh.turns.len(), 1);
        assert!(ssh.turns[0].expect.matches(b"anything"));
    }
}
