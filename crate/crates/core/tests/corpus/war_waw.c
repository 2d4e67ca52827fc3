#define N 1000

int main() {
    int a[N], b[N];
    for (int i = 0; i < N; i++)
        a[i] = i;
    for (int i = 0; i < N; i++)
        b[i] = a[i] + 1;
    #pragma omp target teams distribute parallel for
    for (int i = 0; i < N; i++)
        a[i] = 2 * i;
    #pragma omp target teams distribute parallel for
    for (int i = 0; i < N; i++)
        a[i] = a[i] + 3;
    #pragma omp target teams distribute parallel for
    for (int i = 0; i < N; i++)
        b[i] = 7;
    return 0;
}
