#pragma once

// Minimal RFC 6455 server side: HTTP upgrade handshake plus text, ping and
// close frames. Enough for one browser dashboard per connection.

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <algorithm>
#include <cctype>
#include <optional>
#include <string>
#include <vector>

#include "alvi/error.hpp"
#include "alvi/net.hpp"

namespace alvi::ws {

inline constexpr const char* kHandshakeGuid = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";

inline std::string base64(const unsigned char* data, std::size_t n) {
  std::string out(4 * ((n + 2) / 3) + 1, '\0');
  const int len = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data, static_cast<int>(n));
  out.resize(static_cast<std::size_t>(len));
  return out;
}

inline std::string accept_key(const std::string& client_key) {
  const std::string s = client_key + kHandshakeGuid;
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(s.data()), s.size(), digest);
  return base64(digest, sizeof digest);
}

struct HttpRequest {
  std::string method, path;
  std::vector<std::pair<std::string, std::string>> headers;

  std::optional<std::string> header(const std::string& name) const {
    for (const auto& [k, v] : headers) {
      if (k.size() != name.size()) continue;
      if (std::equal(k.begin(), k.end(), name.begin(), [](char a, char b) { return std::tolower(a) == std::tolower(b); })) return v;
    }
    return std::nullopt;
  }
};

/// Parse a request head terminated by CRLFCRLF. Returns nullopt if incomplete.
inline std::optional<HttpRequest> parse_request(const std::string& buf, std::size_t* consumed = nullptr) {
  const auto end = buf.find("\r\n\r\n");
  if (end == std::string::npos) return std::nullopt;
  HttpRequest r;
  std::size_t pos = buf.find("\r\n");
  const std::string line = buf.substr(0, pos);
  const auto sp1 = line.find(' '), sp2 = line.rfind(' ');
  require(sp1 != std::string::npos && sp2 > sp1, ErrorCode::invalid_argument, "malformed HTTP request line");
  r.method = line.substr(0, sp1);
  r.path = line.substr(sp1 + 1, sp2 - sp1 - 1);
  while (pos < end) {
    const std::size_t next = buf.find("\r\n", pos + 2);
    const std::string h = buf.substr(pos + 2, next - pos - 2);
    if (const auto colon = h.find(':'); colon != std::string::npos) {
      std::string v = h.substr(colon + 1);
      v.erase(0, v.find_first_not_of(" \t"));
      v.erase(v.find_last_not_of(" \t") + 1);
      r.headers.emplace_back(h.substr(0, colon), v);
    }
    pos = next;
  }
  if (consumed) *consumed = end + 4;
  return r;
}

inline std::string handshake_response(const HttpRequest& r) {
  return "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\nSec-WebSocket-Accept: " +
         accept_key(r.header("Sec-WebSocket-Key").value_or("")) + "\r\n\r\n";
}

enum class Opcode : std::uint8_t { continuation = 0, text = 1, binary = 2, close = 8, ping = 9, pong = 10 };

/// Server-to-client frame (unmasked, final).
inline std::string encode_frame(Opcode op, const std::string& payload) {
  std::string f;
  f.push_back(static_cast<char>(0x80 | static_cast<std::uint8_t>(op)));
  const std::size_t n = payload.size();
  if (n < 126) {
    f.push_back(static_cast<char>(n));
  } else if (n <= 0xFFFF) {
    f.push_back(126);
    f.push_back(static_cast<char>(n >> 8));
    f.push_back(static_cast<char>(n & 0xFF));
  } else {
    f.push_back(127);
    for (int i = 7; i >= 0; --i) f.push_back(static_cast<char>((static_cast<std::uint64_t>(n) >> (8 * i)) & 0xFF));
  }
  return f + payload;
}

/// Client-to-server frame (masked, as browsers send). Used by tests and tools.
inline std::string encode_client_frame(Opcode op, const std::string& payload, std::uint32_t mask_key = 0x37fa213d) {
  std::string f = encode_frame(op, payload);
  const std::size_t header = f.size() - payload.size();
  f[1] = static_cast<char>(static_cast<std::uint8_t>(f[1]) | 0x80);
  const char key[4] = {static_cast<char>(mask_key >> 24), static_cast<char>(mask_key >> 16), static_cast<char>(mask_key >> 8),
                       static_cast<char>(mask_key)};
  std::string out = f.substr(0, header) + std::string(key, 4);
  for (std::size_t i = 0; i < payload.size(); ++i) out.push_back(static_cast<char>(payload[i] ^ key[i % 4]));
  return out;
}

struct Frame {
  Opcode op = Opcode::text;
  bool fin = true;
  std::string payload;
};

/// Pop one complete frame from the front of buf, unmasking if needed.
inline std::optional<Frame> decode_frame(std::string& buf, std::size_t max_payload = 1u << 20) {
  if (buf.size() < 2) return std::nullopt;
  const auto b0 = static_cast<std::uint8_t>(buf[0]), b1 = static_cast<std::uint8_t>(buf[1]);
  const bool masked = b1 & 0x80;
  std::uint64_t n = b1 & 0x7F;
  std::size_t pos = 2;
  if (n == 126) {
    if (buf.size() < 4) return std::nullopt;
    n = (static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[2])) << 8) | static_cast<std::uint8_t>(buf[3]);
    pos = 4;
  } else if (n == 127) {
    if (buf.size() < 10) return std::nullopt;
    n = 0;
    for (int i = 0; i < 8; ++i) n = (n << 8) | static_cast<std::uint8_t>(buf[2 + i]);
    pos = 10;
  }
  require(n <= max_payload, ErrorCode::length_mismatch, "websocket frame too large");
  const std::size_t need = pos + (masked ? 4 : 0) + static_cast<std::size_t>(n);
  if (buf.size() < need) return std::nullopt;
  Frame f;
  f.fin = b0 & 0x80;
  f.op = static_cast<Opcode>(b0 & 0x0F);
  f.payload = buf.substr(pos + (masked ? 4 : 0), static_cast<std::size_t>(n));
  if (masked)
    for (std::size_t i = 0; i < f.payload.size(); ++i) f.payload[i] = static_cast<char>(f.payload[i] ^ buf[pos + i % 4]);
  buf.erase(0, need);
  return f;
}

}  // namespace alvi::ws
