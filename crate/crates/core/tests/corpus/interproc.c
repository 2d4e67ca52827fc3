#define N 256

static void normalize(float *v, int n) {
    float m = 0.0f;
    for (int i = 0; i < n; i++)
        if (v[i] > m)
            m = v[i];
    for (int i = 0; i < n; i++)
        v[i] = v[i] / (m + 1.0f);
}

static float checksum(const float *v, int n) {
    float s = 0.0f;
    for (int i = 0; i < n; i++)
        s += v[i];
    return s;
}

int main() {
    float data[N], tmp[N];
    for (int i = 0; i < N; i++)
        data[i] = i * 0.25f;
    for (int it = 0; it < 4; it++) {
        #pragma omp target teams distribute parallel for
        for (int i = 0; i < N; i++)
            tmp[i] = data[i] * data[i];
        normalize(tmp, N);
        #pragma omp target teams distribute parallel for
        for (int i = 0; i < N; i++)
            data[i] = tmp[i] + 1.0f;
    }
    return checksum(data, N) > 0.0f;
}
