#include "routelab/models/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

namespace routelab::models {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

constexpr char kMagic[4] = {'R', 'L', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v)
{
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path)
{
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
        throw std::runtime_error("checkpoint " + path.string() + ": truncated file");
    }
    return v;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, std::span<ad::Parameter* const> params)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
    out.write(kMagic, 4);
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const ad::Parameter* p : params) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.shape().size()));
        for (std::size_t d : p->value.shape()) put<std::uint64_t>(out, d);
        out.write(reinterpret_cast<const char*>(p->value.data().data()),
                  static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
    if (!out.flush()) throw std::runtime_error("checkpoint: write to " + path.string() + " failed");
}

void load_checkpoint(const std::filesystem::path& path, std::span<ad::Parameter* const> params)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
    char magic[4];
    if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) {
        throw std::runtime_error("checkpoint " + path.string() + ": bad magic");
    }
    const auto version = get<std::uint32_t>(in, path);
    if (version != kVersion) {
        throw std::runtime_error("checkpoint " + path.string() + ": unsupported version " +
                                 std::to_string(version));
    }
    const auto count = get<std::uint32_t>(in, path);
    if (count != params.size()) {
        throw std::runtime_error("checkpoint " + path.string() + ": holds " + std::to_string(count) +
                                 " arrays, model has " + std::to_string(params.size()));
    }
    for (ad::Parameter* p : params) {
        std::string name(get<std::uint32_t>(in, path), '\0');
        in.read(name.data(), static_cast<std::streamsize>(name.size()));
        if (name != p->name) {
            throw std::runtime_error("checkpoint " + path.string() + ": expected array '" + p->name +
                                     "', found '" + name + "'");
        }
        ad::Shape shape(get<std::uint32_t>(in, path));
        for (std::size_t& d : shape) d = get<std::uint64_t>(in, path);
        if (shape != p->value.shape()) {
            throw std::runtime_error("checkpoint " + path.string() + ": '" + name + "' has shape " +
                                     ad::shape_str(shape) + ", model expects " +
                                     ad::shape_str(p->value.shape()));
        }
        if (!in.read(reinterpret_cast<char*>(p->value.data().data()),
                     static_cast<std::streamsize>(p->value.size() * sizeof(double)))) {
            throw std::runtime_error("checkpoint " + path.string() + ": truncated data for '" + name + "'");
        }
    }
}

} // namespace routelab::models
