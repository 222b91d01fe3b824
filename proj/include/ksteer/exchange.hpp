#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>

#include "ksteer/steering.hpp"
#include "ksteer/tensor.hpp"

namespace ksteer {

/// One activation frame on the wire:
///   {"id": u64, "layer": u32, "shape": [rows, cols], "data_b64": "<LE f32>"}
/// Frames are newline-delimited; replies reuse the request id and shape.
struct ExchangeFrame {
    std::uint64_t id = 0;
    std::uint32_t layer = 0;
    ActivationMatrix activations;

    friend bool operator==(const ExchangeFrame&, const ExchangeFrame&) = default;
};

/// JSON text of the frame, without the trailing newline.
[[nodiscard]] std::string exchange_encode(const ExchangeFrame& frame);

/// Throws ProtocolError with the byte offset of the first problem in `line`.
[[nodiscard]] ExchangeFrame exchange_decode(std::string_view line);

/// {"id": id|null, "error": message}
[[nodiscard]] std::string exchange_error_frame(std::optional<std::uint64_t> id,
                                               std::string_view message);

/// Stateful request handler for one session. Ids must strictly increase;
/// any rejected request produces an error frame and the session continues.
class ExchangeSession {
public:
    explicit ExchangeSession(const Intervention& intervention, std::size_t d_model);

    /// Reply line (no newline) for one request line.
    [[nodiscard]] std::string handle(std::string_view line);

    [[nodiscard]] std::size_t handled() const noexcept { return handled_; }
    [[nodiscard]] std::size_t rejected() const noexcept { return rejected_; }

private:
    const Intervention& intervention_;
    std::size_t d_model_;
    std::optional<std::uint64_t> last_id_;
    std::size_t handled_ = 0;
    std::size_t rejected_ = 0;
};

/// Reads request lines until EOF, writing one reply line per request.
void serve_exchange(std::istream& in, std::ostream& out, const Intervention& intervention,
                    std::size_t d_model);

/// Listens on host:port and serves each accepted connection as its own
/// session on a separate thread. Returns after `max_sessions` connections have
/// finished (0 = run forever).
void serve_exchange_tcp(const std::string& host, std::uint16_t port,
                        const Intervention& intervention, std::size_t d_model,
                        std::size_t max_sessions = 0);

}  // namespace ksteer
