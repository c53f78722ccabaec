#include "physiome/container.hpp"

#include "physiome/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>

namespace physiome::container {

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
    U bits;
    std::memcpy(&bits, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

template <typename T>
T get_le(const std::uint8_t* p) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
    T value;
    std::memcpy(&value, &bits, sizeof(T));
    return value;
}

template <typename T>
NamedTensor encode(std::string name, DType dtype, std::vector<std::uint64_t> dims, std::span<const T> values) {
    NamedTensor t{std::move(name), dtype, std::move(dims), {}};
    if (t.element_count() != values.size()) throw std::invalid_argument("tensor '" + t.name + "': dims do not match data");
    t.payload.reserve(values.size() * sizeof(T));
    for (const T& v : values) put_le(t.payload, v);
    return t;
}

template <typename T>
std::vector<T> decode(const NamedTensor& t, DType expected) {
    if (t.dtype != expected) throw FormatError("tensor '" + t.name + "' has an unexpected dtype");
    std::vector<T> out(t.element_count());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = get_le<T>(t.payload.data() + i * sizeof(T));
    return out;
}

class Reader {
public:
    explicit Reader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}
    bool done() const { return pos_ == bytes_.size(); }
    const std::uint8_t* take(std::size_t n) {
        if (bytes_.size() - pos_ < n) throw FormatError("truncated container file");
        const std::uint8_t* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }
    template <typename T>
    T read() {
        return get_le<T>(take(sizeof(T)));
    }

private:
    std::vector<std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::size_t dtype_size(DType t) {
    switch (t) {
        case DType::kF32: return 4;
        case DType::kI64: return 8;
        case DType::kU8: return 1;
        case DType::kF64: return 8;
    }
    throw FormatError("unknown dtype code " + std::to_string(static_cast<int>(t)));
}

std::uint64_t NamedTensor::element_count() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

const NamedTensor* ContainerFile::find(std::string_view name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

const NamedTensor& ContainerFile::at(std::string_view name) const {
    const auto* t = find(name);
    if (t == nullptr) throw FormatError("container has no tensor named '" + std::string(name) + "'");
    return *t;
}

void ContainerFile::add(NamedTensor t) {
    if (find(t.name) != nullptr) throw std::invalid_argument("duplicate tensor name '" + t.name + "'");
    tensors.push_back(std::move(t));
}

void write_file(const std::filesystem::path& path, const ContainerFile& file) {
    std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
    put_le(out, kVersion);
    put_le(out, file.modalities);
    put_le(out, file.samples);
    for (const auto& t : file.tensors) {
        if (t.payload.size() != t.element_count() * dtype_size(t.dtype)) {
            throw std::invalid_argument("tensor '" + t.name + "' payload size mismatch");
        }
        put_le(out, static_cast<std::uint32_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        put_le(out, static_cast<std::uint8_t>(t.dtype));
        put_le(out, static_cast<std::uint8_t>(t.dims.size()));
        for (auto d : t.dims) put_le(out, d);
        out.insert(out.end(), t.payload.begin(), t.payload.end());
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot write " + path.string());
    os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!os) throw FormatError("write failed for " + path.string());
}

ContainerFile read_file(const std::filesystem::path& path) {
    Reader r(slurp(path));
    const std::uint8_t* magic = nullptr;
    try {
        magic = r.take(kMagic.size());
    } catch (const FormatError&) {
        throw FormatError(path.string() + ": not a container file");
    }
    if (std::memcmp(magic, kMagic.data(), kMagic.size()) != 0) throw FormatError(path.string() + ": not a container file");
    const auto version = r.read<std::uint32_t>();
    if (version != kVersion) {
        throw FormatError(path.string() + ": container version mismatch (found " + std::to_string(version) +
                          ", expected " + std::to_string(kVersion) + ")");
    }
    ContainerFile file;
    file.modalities = r.read<std::uint32_t>();
    file.samples = r.read<std::uint32_t>();
    while (!r.done()) {
        NamedTensor t;
        const auto name_len = r.read<std::uint32_t>();
        const auto* name = r.take(name_len);
        t.name.assign(reinterpret_cast<const char*>(name), name_len);
        t.dtype = static_cast<DType>(r.read<std::uint8_t>());
        const auto rank = r.read<std::uint8_t>();
        for (int i = 0; i < rank; ++i) t.dims.push_back(r.read<std::uint64_t>());
        const std::size_t bytes = t.element_count() * dtype_size(t.dtype);
        const auto* payload = r.take(bytes);
        t.payload.assign(payload, payload + bytes);
        file.tensors.push_back(std::move(t));
    }
    return file;
}

NamedTensor from_f32(std::string name, std::vector<std::uint64_t> dims, std::span<const float> values) {
    return encode(std::move(name), DType::kF32, std::move(dims), values);
}
NamedTensor from_f64(std::string name, std::vector<std::uint64_t> dims, std::span<const double> values) {
    return encode(std::move(name), DType::kF64, std::move(dims), values);
}
NamedTensor from_i64(std::string name, std::vector<std::uint64_t> dims, std::span<const std::int64_t> values) {
    return encode(std::move(name), DType::kI64, std::move(dims), values);
}
NamedTensor from_u8(std::string name, std::vector<std::uint64_t> dims, std::span<const std::uint8_t> values) {
    return encode(std::move(name), DType::kU8, std::move(dims), values);
}
NamedTensor from_string(std::string name, std::string_view text) {
    std::vector<std::uint8_t> bytes(text.begin(), text.end());
    return from_u8(std::move(name), {bytes.size()}, bytes);
}
NamedTensor from_matrix(std::string name, const ag::Matrix& m) {
    return from_f64(std::move(name), {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())},
                    std::span<const double>(m.data(), static_cast<std::size_t>(m.size())));
}

std::vector<float> to_f32(const NamedTensor& t) { return decode<float>(t, DType::kF32); }
std::vector<double> to_f64(const NamedTensor& t) { return decode<double>(t, DType::kF64); }
std::vector<std::int64_t> to_i64(const NamedTensor& t) { return decode<std::int64_t>(t, DType::kI64); }
std::string to_string(const NamedTensor& t) {
    if (t.dtype != DType::kU8) throw FormatError("tensor '" + t.name + "' is not a byte string");
    return {t.payload.begin(), t.payload.end()};
}
ag::Matrix to_matrix(const NamedTensor& t) {
    if (t.dims.size() != 2) throw FormatError("tensor '" + t.name + "' is not rank 2");
    const auto values = to_f64(t);
    ag::Matrix m(static_cast<ag::Index>(t.dims[0]), static_cast<ag::Index>(t.dims[1]));
    std::copy(values.begin(), values.end(), m.data());
    return m;
}

ContainerFile encode_dataset(const Dataset& ds) {
    ContainerFile file;
    file.modalities = static_cast<std::uint32_t>(ds.modalities);
    file.samples = static_cast<std::uint32_t>(ds.size());
    const std::size_t n = ds.size();
    const auto mods = static_cast<std::size_t>(ds.modalities);

    std::vector<double> rates(mods);
    for (std::size_t m = 0; m < mods; ++m) rates[m] = ds.column_sample_rate(static_cast<int>(m));
    file.add(from_f64("meta/sample_rate_hz", {mods}, rates));

    std::vector<std::int64_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = ds.labels[i] ? *ds.labels[i] : -1;
    file.add(from_i64("meta/labels", {n}, labels));
    file.add(from_u8("meta/availability", {n, mods}, ds.availability));

    std::string ids;
    for (const auto& s : ds.subject_ids) {
        ids += s;
        ids.push_back('\0');
    }
    file.add(from_string("meta/subject_ids", ids));

    for (std::size_t m = 0; m < mods; ++m) {
        const std::size_t length = ds.column_length(static_cast<int>(m));
        std::vector<float> values(n * length, 0.0f);
        for (std::size_t i = 0; i < n; ++i) {
            if (!ds.available(i, static_cast<int>(m))) continue;
            const auto& s = ds.windows[i][m].samples;
            std::copy(s.begin(), s.end(), values.begin() + static_cast<std::ptrdiff_t>(i * length));
        }
        file.add(from_f32("signal/" + std::to_string(m), {n, length}, values));
    }
    return file;
}

Dataset decode_dataset(const ContainerFile& file) {
    Dataset ds;
    ds.modalities = static_cast<int>(file.modalities);
    const std::size_t n = file.samples;
    const std::size_t mods = file.modalities;
    const auto rates = to_f64(file.at("meta/sample_rate_hz"));
    const auto labels = to_i64(file.at("meta/labels"));
    const auto& avail = file.at("meta/availability");
    const std::string ids = to_string(file.at("meta/subject_ids"));
    if (rates.size() != mods || labels.size() != n || avail.payload.size() != n * mods) {
        throw FormatError("container metadata does not match its header");
    }
    std::vector<std::string> subjects;
    std::size_t start = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] == '\0') {
            subjects.push_back(ids.substr(start, i - start));
            start = i + 1;
        }
    }
    if (subjects.size() != n) throw FormatError("container subject id count mismatch");

    std::vector<std::vector<float>> columns(mods);
    std::vector<std::size_t> lengths(mods);
    for (std::size_t m = 0; m < mods; ++m) {
        const auto& t = file.at("signal/" + std::to_string(m));
        if (t.dims.size() != 2 || t.dims[0] != n) throw FormatError("signal tensor shape mismatch");
        lengths[m] = t.dims[1];
        columns[m] = to_f32(t);
    }
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<SignalWindow> row(mods);
        std::vector<std::uint8_t> row_avail(mods);
        const std::optional<int> label = labels[i] >= 0 ? std::optional<int>(static_cast<int>(labels[i])) : std::nullopt;
        for (std::size_t m = 0; m < mods; ++m) {
            auto& w = row[m];
            w.sample_rate_hz = rates[m];
            w.modality_id = static_cast<int>(m);
            w.subject_id = subjects[i];
            w.label = label;
            row_avail[m] = avail.payload[i * mods + m];
            if (row_avail[m] != 0) {
                const auto first = columns[m].begin() + static_cast<std::ptrdiff_t>(i * lengths[m]);
                w.samples.assign(first, first + static_cast<std::ptrdiff_t>(lengths[m]));
            }
        }
        ds.push_back(std::move(row), std::move(row_avail));
    }
    return ds;
}

void write_container(const std::filesystem::path& path, const Dataset& ds) { write_file(path, encode_dataset(ds)); }

Dataset read_container(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

std::string fnv1a_hex(std::span<const std::uint8_t> bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (auto b : bytes) {
        h ^= b;
        h *= 1099511628211ull;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

std::string file_hash(const std::filesystem::path& path) {
    const auto bytes = slurp(path);
    return fnv1a_hex(bytes);
}

}  // namespace physiome::container
