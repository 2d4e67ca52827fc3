#define N 100

int main() {
    int a[N] = {}, sum = 0;
    for (int i = 0; i < M; ++i) {
        #pragma omp target
        for (int j = 0; j < N; ++j) {
            a[j] += j;
        }

        for (int j = 0; j < N; ++j) {
            sum += a[j];
        }
    }
    return sum;
}
