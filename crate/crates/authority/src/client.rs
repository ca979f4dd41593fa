use std::io::{self, BufReader, BufWriter};
use std::net::{SocketAddr, TcpStream};
use std::time::Duration;

use martsia_core::abe::UserKeyComponent;
use martsia_core::ledger::Account;
use thiserror::Error;

use crate::frame::{decode, read_payload, write_frame, write_payload, Frame};
use crate::node::auth_payload;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("authority unreachable: {0}")]
    Unreachable(#[from] io::Error),
    #[error("authority refused: {code}: {detail}")]
    Rejected { code: String, detail: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl ClientError {
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Rejected { code, .. } => Some(code),
            _ => None,
        }
    }
}

/// One session with an authority over TCP.
#[derive(Debug)]
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    session_id: Option<[u8; 16]>,
}

impl Client {
    pub fn connect(addr: SocketAddr, timeout: Duration) -> Result<Self, ClientError> {
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        Ok(Client {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            session_id: None,
        })
    }

    /// Sends a raw payload and returns the decoded reply.
    pub fn exchange_raw(&mut self, payload: &[u8]) -> Result<Frame, ClientError> {
        write_payload(&mut self.writer, payload)?;
        let reply = read_payload(&mut self.reader)?;
        decode(&reply).map_err(|e| ClientError::Protocol(format!("{e:?}")))
    }

    pub fn exchange(&mut self, frame: &Frame) -> Result<Frame, ClientError> {
        write_frame(&mut self.writer, frame)?;
        let reply = read_payload(&mut self.reader)?;
        decode(&reply).map_err(|e| ClientError::Protocol(format!("{e:?}")))
    }

    /// Sends HELLO and returns `(session_id, nonce)`.
    pub fn hello(&mut self, address: &str) -> Result<([u8; 16], [u8; 32]), ClientError> {
        match self.exchange(&Frame::Hello {
            address: address.to_string(),
        })? {
            Frame::Challenge { session_id, nonce } => {
                self.session_id = Some(session_id);
                Ok((session_id, nonce))
            }
            other => Err(unexpected(other)),
        }
    }

    pub fn auth(&mut self, session_id: [u8; 16], signature: Vec<u8>) -> Result<(), ClientError> {
        match self.exchange(&Frame::Auth {
            session_id,
            signature: Some(signature),
            status: None,
        })? {
            Frame::Auth {
                status: Some(s), ..
            } if s == "ok" => Ok(()),
            other => Err(unexpected(other)),
        }
    }

    /// Full handshake for `account` against `authority_id`.
    pub fn authenticate(
        &mut self,
        account: &Account,
        authority_id: &str,
    ) -> Result<(), ClientError> {
        let (session_id, nonce) = self.hello(&account.address())?;
        let sig = account.sign(&auth_payload(&nonce, authority_id));
        self.auth(session_id, sig.to_bytes().to_vec())
    }

    pub fn request_keys(
        &mut self,
        attributes: Option<Vec<String>>,
    ) -> Result<Vec<UserKeyComponent>, ClientError> {
        let session_id = self.session_id.unwrap_or_default();
        match self.exchange(&Frame::KeyRequest {
            session_id,
            attributes,
        })? {
            Frame::KeyResponse { components } => Ok(components),
            other => Err(unexpected(other)),
        }
    }
}

fn unexpected(frame: Frame) -> ClientError {
    match frame {
        Frame::Error { code, detail } => ClientError::Rejected { code, detail },
        other => ClientError::Protocol(format!("unexpected reply {other:?}")),
    }
}

/// Connects, authenticates and fetches all key components the authority
/// will issue to `account`.
pub fn fetch_keys(
    addr: SocketAddr,
    account: &Account,
    authority_id: &str,
    timeout: Duration,
) -> Result<Vec<UserKeyComponent>, ClientError> {
    let mut client = Client::connect(addr, timeout)?;
    client.authenticate(account, authority_id)?;
    client.request_keys(None)
}
