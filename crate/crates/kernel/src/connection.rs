//! Connection files: the JSON document a kernel reads to learn where to bind.

use std::fs;
use std::io;
use std::net::TcpListener;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

pub const SIGNATURE_SCHEME: &str = "hmac-sha256";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionInfo {
    pub shell_port: u16,
    pub iopub_port: u16,
    pub stdin_port: u16,
    pub control_port: u16,
    pub hb_port: u16,
    pub ip: String,
    /// Used as HMAC key in its UTF-8 form, as Jupyter does.
    pub key: String,
    pub transport: String,
    pub signature_scheme: String,
    #[serde(default)]
    pub kernel_name: String,
}

impl ConnectionInfo {
    /// Picks five distinct free loopback ports and a fresh random key.
    ///
    /// All five listeners are held open at the same time so the ports are
    /// distinct; they are released just before the kernel binds them.
    pub fn allocate(kernel_name: &str) -> io::Result<Self> {
        let listeners = (0..5)
            .map(|_| TcpListener::bind(("127.0.0.1", 0)))
            .collect::<io::Result<Vec<_>>>()?;
        let ports = listeners
            .iter()
            .map(|l| l.local_addr().map(|a| a.port()))
            .collect::<io::Result<Vec<_>>>()?;

        let mut key = [0u8; 32];
        rand::thread_rng().fill_bytes(&mut key);

        Ok(Self {
            shell_port: ports[0],
            iopub_port: ports[1],
            stdin_port: ports[2],
            control_port: ports[3],
            hb_port: ports[4],
            ip: "127.0.0.1".to_owned(),
            key: hex::encode(key),
            transport: "tcp".to_owned(),
            signature_scheme: SIGNATURE_SCHEME.to_owned(),
            kernel_name: kernel_name.to_owned(),
        })
    }

    pub fn key_bytes(&self) -> &[u8] {
        self.key.as_bytes()
    }

    pub fn endpoint(&self, port: u16) -> String {
        format!("{}://{}:{}", self.transport, self.ip, port)
    }

    pub fn ports(&self) -> [u16; 5] {
        [
            self.shell_port,
            self.iopub_port,
            self.stdin_port,
            self.control_port,
            self.hb_port,
        ]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("connection info serializes")
    }

    pub fn write_to(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_json())?;
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            fs::set_permissions(path, fs::Permissions::from_mode(0o600))?;
        }
        Ok(())
    }

    pub fn read_from(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocated_ports_are_distinct() {
        let info = ConnectionInfo::allocate("python3").unwrap();
        let mut ports = info.ports().to_vec();
        ports.sort_unstable();
        ports.dedup();
        assert_eq!(ports.len(), 5);
        assert_eq!(info.key.len(), 64);
        assert_eq!(info.signature_scheme, "hmac-sha256");
        assert_eq!(
            info.endpoint(info.shell_port),
            format!("tcp://127.0.0.1:{}", info.shell_port)
        );
    }

    #[test]
    fn file_uses_jupyter_field_names() {
        let info = ConnectionInfo::allocate("k").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kernel.json");
        info.write_to(&path).unwrap();
        let raw: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        for key in [
            "shell_port",
            "iopub_port",
            "stdin_port",
            "control_port",
            "hb_port",
            "ip",
            "key",
            "transport",
            "signature_scheme",
        ] {
            assert!(raw.get(key).is_some(), "{key}");
        }
        assert_eq!(ConnectionInfo::read_from(&path).unwrap(), info);
    }

    #[test]
    fn reads_a_jupyter_written_file() {
        let text = r#"{"shell_port": 53794, "iopub_port": 53795, "stdin_port": 53796,
            "control_port": 53797, "hb_port": 53798, "ip": "127.0.0.1",
            "key": "a0436f6c-1916-498b-8eb9-e81ab9368e84", "transport": "tcp",
            "signature_scheme": "hmac-sha256"}"#;
        let info: ConnectionInfo = serde_json::from_str(text).unwrap();
        assert_eq!(info.hb_port, 53798);
        assert_eq!(info.key_bytes(), b"a0436f6c-1916-498b-8eb9-e81ab9368e84");
    }
}
