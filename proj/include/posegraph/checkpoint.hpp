#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "posegraph/binary_io.hpp"
#include "posegraph/convnet.hpp"

namespace posegraph {

// Layout (all integers and doubles little-endian):
//   "PGCK" | u32 version | 11 x u64 architecture | u64 count | count x f64
// Parameters follow NetworkParams::blocks() order.
inline constexpr std::string_view kCheckpointMagic = "PGCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public DataError {
public:
    enum class Kind { BadMagic, VersionMismatch, Truncated, ArchitectureMismatch, Corrupt };

    CheckpointError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
    CheckpointError(std::size_t wanted, std::size_t available)
        : CheckpointError(Kind::Truncated, detail::concat("checkpoint truncated: needed ", wanted,
                                                          " more bytes, only ", available, " left"))
    {
    }

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

inline Bytes save_checkpoint(const NetworkParams& params)
{
    ByteWriter w;
    w.raw(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    const Architecture& a = params.arch;
    w.u64(a.patchSize);
    w.u64(a.inputChannels);
    for (auto v : a.convMaps)
        w.u64(v);
    for (auto v : a.convKernels)
        w.u64(v);
    for (auto v : a.fcWidths)
        w.u64(v);
    w.u64(params.parameter_count());
    for (const auto& block : params.blocks())
        w.f64s(block);
    return std::move(w).bytes();
}

/// Parses a checkpoint. When `expected` is given, the stored architecture must match it.
inline NetworkParams load_checkpoint(std::span<const std::uint8_t> bytes,
                                     const std::optional<Architecture>& expected = std::nullopt)
{
    using Kind = CheckpointError::Kind;
    ByteReader<CheckpointError> r(bytes);
    if (bytes.size() < kCheckpointMagic.size() || r.raw(kCheckpointMagic.size()) != kCheckpointMagic)
        throw CheckpointError(Kind::BadMagic, "checkpoint has bad magic header (expected 'PGCK')");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw CheckpointError(Kind::VersionMismatch, detail::concat("checkpoint version ", version,
                                                                    " unsupported (expected ", kCheckpointVersion, ")"));
    Architecture a;
    a.patchSize = r.u64();
    a.inputChannels = r.u64();
    for (auto& v : a.convMaps)
        v = r.u64();
    for (auto& v : a.convKernels)
        v = r.u64();
    for (auto& v : a.fcWidths)
        v = r.u64();
    if (expected && !(a == *expected))
        throw CheckpointError(Kind::ArchitectureMismatch,
                              detail::concat("checkpoint architecture mismatch: stored ", a.inputChannels,
                                             " input channels, maps ", a.convMaps[0], "/", a.convMaps[1], "/",
                                             a.convMaps[2], "; expected ", expected->inputChannels, " channels, maps ",
                                             expected->convMaps[0], "/", expected->convMaps[1], "/",
                                             expected->convMaps[2]));
    NetworkParams params = [&] {
        try {
            return NetworkParams(a);
        } catch (const ContractViolation& e) {
            throw CheckpointError(Kind::Corrupt, std::string("checkpoint architecture invalid: ") + e.what());
        }
    }();
    const std::uint64_t count = r.u64();
    if (count != params.parameter_count())
        throw CheckpointError(Kind::Corrupt, detail::concat("checkpoint stores ", count, " parameters, architecture needs ",
                                                            params.parameter_count()));
    for (auto block : params.blocks())
        r.f64s(block);
    if (r.remaining() != 0)
        throw CheckpointError(Kind::Corrupt, detail::concat("checkpoint has ", r.remaining(), " trailing bytes"));
    return params;
}

inline void write_checkpoint(const std::string& path, const NetworkParams& params)
{
    write_file_bytes(path, save_checkpoint(params));
}

inline NetworkParams read_checkpoint(const std::string& path, const std::optional<Architecture>& expected = std::nullopt)
{
    return load_checkpoint(read_file_bytes(path), expected);
}

} // namespace posegraph
