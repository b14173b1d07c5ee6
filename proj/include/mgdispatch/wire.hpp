#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace mgd {

struct WireError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Message vocabulary of the controller <-> hub <-> unit protocol.
enum class WireType : std::uint8_t {
  Tick = 0,          // logical-clock marker, controller -> units, never dropped
  Measurement = 1,   // battery SoC reading, unit -> controller
  Availability = 2,  // PV available power / load demand, unit -> controller
  SetpointPlan = 3,  // horizon set-point sequence, controller -> unit
  Ack = 4,           // registration and hub end-of-telemetry summary
};

// Tick phases carried in the flags byte.
inline constexpr std::uint8_t kTickSample = 0;  // respond with telemetry
inline constexpr std::uint8_t kTickApply = 1;   // actuate this step's set-point

// Unit-id address space (u16).
inline constexpr std::uint16_t kIdBroadcast = 0;
inline constexpr std::uint16_t kIdBatteryBase = 0x100;
inline constexpr std::uint16_t kIdPvBase = 0x200;
inline constexpr std::uint16_t kIdLoadBase = 0x300;
inline constexpr std::uint16_t kIdHubBase = 0x400;

// One protocol frame. Binary layout (all little-endian):
//   u8  version (= 1)
//   u8  type
//   u8  flags
//   u8  reserved (= 0)
//   u16 unit_id        subject unit (origin for uplink, destination downlink)
//   u16 count          number of payload doubles
//   u32 k              tick index
//   f64 x count        payload
//   u32 crc            CRC-32 (IEEE) over all preceding bytes
// On the stream each frame is preceded by a u32 length of the bytes above.
struct WireFrame {
  std::uint8_t version = 1;
  WireType type = WireType::Tick;
  std::uint8_t flags = 0;
  std::uint16_t unit_id = 0;
  std::uint32_t k = 0;
  std::vector<double> payload;
};

std::uint32_t crc32_ieee(const std::uint8_t* data, std::size_t n);

// Header + payload + checksum, without the stream length prefix.
std::vector<std::uint8_t> encode_frame(const WireFrame& f);
// Validates version, length consistency, and checksum.
WireFrame decode_frame(const std::uint8_t* data, std::size_t n);

std::string frame_to_json_line(const WireFrame& f);   // one line, no newline
WireFrame frame_from_json_line(const std::string& s); // validates checksum

// Listening TCP socket bound to a loopback endpoint. Port 0 selects an
// ephemeral port, readable through port() after construction.
class TcpListener {
 public:
  TcpListener(const std::string& host, std::uint16_t port);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const { return port_; }
  int accept_fd();  // blocking; throws WireError on failure

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

int tcp_connect(const std::string& host, std::uint16_t port);

// Frame-oriented stream over a connected socket. The binary transport is
// the default; the JSON-lines transport carries the same frames as text
// for debugging. Both validate checksums on receipt.
class FrameSocket {
 public:
  FrameSocket(int fd, bool json_transport);
  ~FrameSocket();
  FrameSocket(FrameSocket&& other) noexcept;
  FrameSocket& operator=(FrameSocket&&) = delete;
  FrameSocket(const FrameSocket&) = delete;
  FrameSocket& operator=(const FrameSocket&) = delete;

  void send(const WireFrame& f);
  // False on orderly peer shutdown before any byte of a frame.
  bool recv(WireFrame* f);
  void shutdown() noexcept;  // unblocks any reader/writer on the socket

 private:
  int fd_ = -1;
  bool json_ = false;
  std::vector<std::uint8_t> buf_;  // unconsumed read-ahead (JSON transport)
};

}  // namespace mgd
